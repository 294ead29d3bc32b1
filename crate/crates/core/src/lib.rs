//! Bi-temporal change detection at desk scale.
//!
//! A weight-sharing Siamese encoder extracts features from two images of
//! the same scene; similarity-guided channel and spatial attention blocks
//! fuse them across decoder stages, with deep supervision and a margin
//! contrastive loss on the deepest features. Everything runs on a small
//! built-in autodiff tape, trains on a deterministic synthetic scene
//! generator, and is verified by finite differences and scalar oracles.

pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod similarity;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tape, Tensor, VarId};
