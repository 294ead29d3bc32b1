//! Per-pixel similarity between bi-temporal feature maps and the margin
//! contrastive objective on the deepest encoder features.
//!
//! Feature vectors are projected onto the unit hypersphere per pixel, so
//! the distance depends only on the angle between them: positive rescaling
//! of either feature map leaves every value unchanged. Distance 0 means
//! aligned; sqrt(2) means orthogonal.

use crate::error::{Error, Result};
use crate::tensor::{ChanReduce, Scalar, Tape, Tensor, VarId};

/// Margin contrastive loss settings.
#[derive(Clone, Copy, Debug)]
pub struct ContrastiveConfig {
    /// Hinge margin on the cosine distance of changed pixels.
    pub margin: f64,
    /// Added under the square root of the distance so the gradient stays
    /// bounded for identical features.
    pub sqrt_eps: f64,
    pub reduction: Reduction,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            margin: 1.0,
            sqrt_eps: 1e-12,
            reduction: Reduction::Mean,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        let sqrt2 = std::f64::consts::SQRT_2;
        if !(self.margin > 0.0 && self.margin <= sqrt2) {
            return Err(Error::value(
                "contrastive",
                format!("margin {} outside (0, sqrt(2)]", self.margin),
            ));
        }
        if self.sqrt_eps <= 0.0 {
            return Err(Error::value("contrastive", "sqrt_eps must be positive"));
        }
        Ok(())
    }
}

const NORM_EPS: f64 = 1e-12;

fn check_same_shape<S: Scalar>(op: &'static str, tape: &Tape<S>, a: VarId, b: VarId) -> Result<()> {
    if tape.value(a).shape() != tape.value(b).shape() {
        return Err(Error::shape(
            op,
            format!(
                "{:?} vs {:?}",
                tape.value(a).shape(),
                tape.value(b).shape()
            ),
        ));
    }
    Ok(())
}

/// Per-pixel cosine similarity of two `[N,C,H,W]` maps -> `[N,1,H,W]`.
///
/// Channel vectors are L2-normalized, multiplied, and summed over channels;
/// zero vectors yield similarity 0. Output is clamped to `[-1, 1]` (float
/// round-off can overshoot by an ulp).
pub fn cosine_similarity_map<S: Scalar>(tape: &mut Tape<S>, f1: VarId, f2: VarId) -> Result<VarId> {
    check_same_shape("cosine_similarity_map", tape, f1, f2)?;
    tape.value(f1).dims4()?;
    let n1 = tape.channel_l2_normalize(f1, S::of(NORM_EPS))?;
    let n2 = tape.channel_l2_normalize(f2, S::of(NORM_EPS))?;
    let prod = tape.mul(n1, n2)?;
    let sim = tape.channel_reduce(prod, ChanReduce::Sum)?;
    Ok(tape.clamp(sim, S::of(-1.0), S::of(1.0)))
}

/// Per-pixel cosine distance `sqrt(2 - 2*sim)` -> `[N,1,H,W]`, in `[0, sqrt(2)]`.
pub fn cosine_distance_map<S: Scalar>(
    tape: &mut Tape<S>,
    f1: VarId,
    f2: VarId,
    sqrt_eps: f64,
) -> Result<VarId> {
    let sim = cosine_similarity_map(tape, f1, f2)?;
    distance_from_similarity(tape, sim, sqrt_eps)
}

/// `sqrt(max(2 - 2*sim, 0) + eps)`; the clamp absorbs round-off above 1.
pub fn distance_from_similarity<S: Scalar>(
    tape: &mut Tape<S>,
    sim: VarId,
    sqrt_eps: f64,
) -> Result<VarId> {
    let two_minus = tape.affine(sim, S::of(-2.0), S::of(2.0));
    let nonneg = tape.relu(two_minus);
    Ok(tape.sqrt_eps(nonneg, S::of(sqrt_eps)))
}

fn check_binary_labels<S: Scalar>(op: &'static str, labels: &Tensor<S>) -> Result<()> {
    for &v in labels.data() {
        if v != S::ZERO && v != S::ONE {
            return Err(Error::value(op, format!("label value {v} not in {{0,1}}")));
        }
    }
    Ok(())
}

/// Margin contrastive loss over per-pixel cosine distances.
///
/// Unchanged pixels (y=0) contribute `d^2/2`; changed pixels (y=1)
/// contribute `max(m - d, 0)^2 / 2`, so a changed pair already past the
/// margin receives neither loss nor gradient. Gradients flow to the
/// feature maps only.
pub fn contrastive_loss<S: Scalar>(
    tape: &mut Tape<S>,
    f1: VarId,
    f2: VarId,
    labels: &Tensor<S>,
    cfg: &ContrastiveConfig,
) -> Result<VarId> {
    cfg.validate()?;
    check_same_shape("contrastive_loss", tape, f1, f2)?;
    let (n, _, h, w) = tape.value(f1).dims4()?;
    if labels.shape() != [n, 1, h, w] {
        return Err(Error::shape(
            "contrastive_loss",
            format!("labels {:?}, expected [{n},1,{h},{w}]", labels.shape()),
        ));
    }
    check_binary_labels("contrastive_loss", labels)?;

    let y = tape.constant(labels.clone());
    let d = cosine_distance_map(tape, f1, f2, cfg.sqrt_eps)?;
    let d2 = tape.mul(d, d)?;
    let one_minus_y = tape.affine(y, S::of(-1.0), S::ONE);
    let unchanged = tape.mul(one_minus_y, d2)?;
    let margin_gap = tape.affine(d, S::of(-1.0), S::of(cfg.margin));
    let hinge = tape.relu(margin_gap);
    let hinge2 = tape.mul(hinge, hinge)?;
    let changed = tape.mul(y, hinge2)?;
    let sum = tape.add(unchanged, changed)?;
    let half = tape.affine(sum, S::of(0.5), S::ZERO);
    Ok(match cfg.reduction {
        Reduction::Mean => tape.mean_all(half),
        Reduction::Sum => tape.sum_all(half),
    })
}

/// Downsample a binary mask by block-majority vote: a coarse pixel is 1
/// iff at least half of its fine block is 1 (ties count as changed).
pub fn downsample_labels<S: Scalar>(y: &Tensor<S>, factor: usize) -> Result<Tensor<S>> {
    let (n, c, h, w) = y.dims4()?;
    if c != 1 {
        return Err(Error::shape(
            "downsample_labels",
            format!("expected single channel, got {c}"),
        ));
    }
    if !factor.is_power_of_two() {
        return Err(Error::value(
            "downsample_labels",
            format!("factor {factor} is not a power of two"),
        ));
    }
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::shape(
            "downsample_labels",
            format!("{h}x{w} not divisible by {factor}"),
        ));
    }
    check_binary_labels("downsample_labels", y)?;
    if factor == 1 {
        return Ok(y.clone());
    }
    let (ho, wo) = (h / factor, w / factor);
    let mut out = vec![S::ZERO; n * ho * wo];
    let half_block = factor * factor; // compare 2*count against this
    for ni in 0..n {
        let plane = &y.data()[ni * h * w..(ni + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut count = 0usize;
                for fy in 0..factor {
                    for fx in 0..factor {
                        if plane[(oy * factor + fy) * w + ox * factor + fx] == S::ONE {
                            count += 1;
                        }
                    }
                }
                if 2 * count >= half_block {
                    out[(ni * ho + oy) * wo + ox] = S::ONE;
                }
            }
        }
    }
    Ok(Tensor::from_vec(&[n, 1, ho, wo], out))
}
