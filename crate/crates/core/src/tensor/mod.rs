//! Dense tensors and a reverse-mode differentiation tape.
//!
//! Everything downstream (similarity maps, the network, the losses) is
//! built from the primitives recorded on [`Tape`]. Training runs in `f32`;
//! gradient verification instantiates the same code at `f64`, where central
//! finite differences have enough headroom below the tolerances.

mod gradcheck;
mod kernels;
mod tape;

pub use gradcheck::{finite_difference_check, numeric_grads, FdFailure, FdReport};
pub use tape::{BinKind, ChanReduce, PoolMode, Tape, VarId};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Element type of a tensor: `f32` for training, `f64` for verification.
pub trait Scalar:
    Copy
    + PartialOrd
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::iter::Sum
{
    const ZERO: Self;
    const ONE: Self;
    /// Largest representable value strictly below one.
    const ONE_MINUS_ULP: Self;
    /// Smallest positive normal value.
    const TINY: Self;
    fn of(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn maxs(self, o: Self) -> Self;
    fn mins(self, o: Self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_scalar {
    ($t:ty, $one_minus_ulp:expr) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            const ONE_MINUS_ULP: Self = $one_minus_ulp;
            const TINY: Self = <$t>::MIN_POSITIVE;
            #[inline]
            fn of(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                self.exp()
            }
            #[inline]
            fn ln(self) -> Self {
                self.ln()
            }
            #[inline]
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            #[inline]
            fn abs(self) -> Self {
                self.abs()
            }
            #[inline]
            fn maxs(self, o: Self) -> Self {
                self.max(o)
            }
            #[inline]
            fn mins(self, o: Self) -> Self {
                self.min(o)
            }
            #[inline]
            fn is_finite(self) -> bool {
                self.is_finite()
            }
        }
    };
}

impl_scalar!(f32, 0.999_999_94_f32); // 1 - 2^-24
impl_scalar!(f64, 0.999_999_999_999_999_9_f64); // 1 - 2^-53

/// Dense row-major N-dimensional array with an optional gradient slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S: Scalar> {
    shape: Vec<usize>,
    data: Vec<S>,
    requires_grad: bool,
    grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::ZERO; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: &[usize], v: S) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: S) -> Self {
        Tensor::from_vec(&[1], vec![v])
    }

    /// Kaiming-style fan-in normal init: std = sqrt(2 / fan_in).
    pub fn kaiming(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| S::of(rng.normal() * std)).collect();
        Tensor::from_vec(shape, data)
    }

    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| S::of(rng.uniform(lo, hi))).collect();
        Tensor::from_vec(shape, data)
    }

    pub fn requires_grad(mut self, yes: bool) -> Self {
        self.requires_grad = yes;
        self
    }

    pub fn requires_grad_flag(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    pub(crate) fn grad_slot(&mut self) -> &mut Option<Vec<S>> {
        &mut self.grad
    }

    /// Interpret as `[N, C, H, W]`. Zero-sized dimensions are rejected.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape.as_slice() {
            [n, c, h, w] if *n > 0 && *c > 0 && *h > 0 && *w > 0 => Ok((*n, *c, *h, *w)),
            other => Err(Error::shape(
                "dims4",
                format!("expected 4-d with positive dims, got {other:?}"),
            )),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [a, b] if *a > 0 && *b > 0 => Ok((*a, *b)),
            other => Err(Error::shape(
                "dims2",
                format!("expected 2-d with positive dims, got {other:?}"),
            )),
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> S {
        assert!(self.is_scalar(), "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        Tensor::from_vec(&self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_vec(
            &self.shape,
            self.data.iter().map(|&v| T::of(v.to_f64())).collect(),
        )
        .requires_grad(self.requires_grad)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stack tensors of identical shape along a new leading axis.
    pub fn stack(items: &[&Tensor<S>]) -> Tensor<S> {
        assert!(!items.is_empty());
        let shape = items[0].shape();
        let mut data = Vec::with_capacity(items.len() * items[0].len());
        for t in items {
            assert_eq!(t.shape(), shape, "stack: mismatched shapes");
            data.extend_from_slice(t.data());
        }
        let mut out_shape = vec![items.len()];
        out_shape.extend_from_slice(shape);
        Tensor::from_vec(&out_shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_and_accessors() {
        let t = Tensor::<f32>::from_vec(&[2, 3], vec![1., 2., 3., 4., 5., 6.]);
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.len(), 6);
        assert_eq!(t.dims2().unwrap(), (2, 3));
        assert!(t.dims4().is_err());
    }

    #[test]
    #[should_panic]
    fn from_vec_length_mismatch_panics() {
        let _ = Tensor::<f32>::from_vec(&[2, 2], vec![1.0]);
    }

    #[test]
    fn kaiming_scale_tracks_fan_in() {
        let mut rng = Rng::from_seed(3);
        let t = Tensor::<f64>::kaiming(&[64, 64], 64, &mut rng);
        let var: f64 = t.data().iter().map(|v| v * v).sum::<f64>() / t.len() as f64;
        let expect = 2.0 / 64.0;
        assert!((var - expect).abs() < expect * 0.2, "var {var} expect {expect}");
    }

    #[test]
    fn stack_concatenates_along_new_axis() {
        let a = Tensor::<f32>::full(&[2, 2], 1.0);
        let b = Tensor::<f32>::full(&[2, 2], 2.0);
        let s = Tensor::stack(&[&a, &b]);
        assert_eq!(s.shape(), &[2, 2, 2]);
        assert_eq!(&s.data()[..4], &[1.0; 4]);
        assert_eq!(&s.data()[4..], &[2.0; 4]);
    }
}
