//! Reverse-mode automatic differentiation over small dense tensors.
//!
//! A [`Tape`] records every operation applied to [`Var`]s that descend from a
//! gradient-requiring leaf. [`Tape::backward`] then walks the record in reverse
//! and accumulates gradients into a [`Gradients`] table. Every operation is
//! generic over [`Scalar`], so the same graph can be evaluated in `f32` for
//! training and in `f64` for finite-difference checks.
//!
//! Tapes are single-threaded. Run one tape per sample and merge the resulting
//! gradients with [`optim::reduce_gradients`] for a deterministic batch sum.

mod error;
pub mod gradcheck;
pub mod ops;
pub mod optim;
mod scalar;
mod tape;
mod tensor;

pub use error::{AutodiffError, Result};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
