//! Exact geometric augmentation: flips and quarter-turn rotations applied
//! identically to both images and the mask. No interpolation, so masks
//! stay binary and every op is an exact pixel permutation.

use super::SamplePair;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentOp {
    None,
    HFlip,
    VFlip,
    Rot90,
    Rot180,
    Rot270,
}

impl AugmentOp {
    pub const ALL: [AugmentOp; 6] = [
        AugmentOp::None,
        AugmentOp::HFlip,
        AugmentOp::VFlip,
        AugmentOp::Rot90,
        AugmentOp::Rot180,
        AugmentOp::Rot270,
    ];

    pub fn draw(rng: &mut Rng) -> AugmentOp {
        Self::ALL[rng.next_below(6) as usize]
    }
}

/// Apply to a `[C,H,W]` tensor. Rotations require H == W.
pub fn apply_chw<S: Scalar>(t: &Tensor<S>, op: AugmentOp) -> Result<Tensor<S>> {
    let shape = t.shape();
    if shape.len() != 3 {
        return Err(Error::shape(
            "augment",
            format!("expected [C,H,W], got {shape:?}"),
        ));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if matches!(op, AugmentOp::Rot90 | AugmentOp::Rot270) && h != w {
        return Err(Error::shape(
            "augment",
            format!("rotation requires square images, got {h}x{w}"),
        ));
    }
    if op == AugmentOp::None {
        return Ok(t.clone());
    }
    let src = t.data();
    let mut out = vec![S::ZERO; src.len()];
    let plane = h * w;
    for ci in 0..c {
        let s = &src[ci * plane..(ci + 1) * plane];
        let d = &mut out[ci * plane..(ci + 1) * plane];
        for y in 0..h {
            for x in 0..w {
                // clockwise quarter turns
                let v = match op {
                    AugmentOp::None => unreachable!(),
                    AugmentOp::HFlip => s[y * w + (w - 1 - x)],
                    AugmentOp::VFlip => s[(h - 1 - y) * w + x],
                    AugmentOp::Rot90 => s[(h - 1 - x) * w + y],
                    AugmentOp::Rot180 => s[(h - 1 - y) * w + (w - 1 - x)],
                    AugmentOp::Rot270 => s[x * w + (w - 1 - y)],
                };
                d[y * w + x] = v;
            }
        }
    }
    Ok(Tensor::from_vec(shape, out))
}

/// Same transform on images and mask.
pub fn augment(sample: &SamplePair, op: AugmentOp) -> Result<SamplePair> {
    Ok(SamplePair {
        t1: apply_chw(&sample.t1, op)?,
        t2: apply_chw(&sample.t2, op)?,
        mask: apply_chw(&sample.mask, op)?,
    })
}
