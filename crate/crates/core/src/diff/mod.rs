//! Dense tensors, a define-by-run reverse-mode tape and the Adam optimizer.
//!
//! A [`Tape`] is rebuilt for every optimization step. Leaves are either
//! parameters ([`Tape::param`], gradients tracked) or constants
//! ([`Tape::constant`], detached). [`Tape::backward`] walks the recorded
//! nodes in reverse order and accumulates gradients into a [`Gradients`]
//! table. Everything is generic over [`Scalar`] so the same model code runs
//! in `f32` for training and `f64` for finite-difference checks.

mod adam;
mod scalar;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeError {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("non-finite gradient, optimizer step skipped ({skipped} skipped so far)")]
    NonFiniteGradient { skipped: u64 },
}
