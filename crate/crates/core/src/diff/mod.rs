//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records every primitive applied during a forward pass. Calling
//! [`Tape::backward`] on a scalar node walks the record in reverse and returns
//! a [`Gradients`] map. Tapes are cheap to build and are rebuilt for every
//! training step.

mod adam;
mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{central_difference, grad_check};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: unsupported rank for shape {shape:?}")]
    Rank { op: &'static str, shape: Vec<usize> },
    #[error("{op}: needs at least one input")]
    EmptyInput { op: &'static str },
    #[error("data of length {len} does not fit shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("non-finite gradient in parameter group `{group}`")]
    NonFiniteGradient { group: String },
    #[error("parameter group `{group}`: {params} parameters but {grads} gradients")]
    GroupSize {
        group: String,
        params: usize,
        grads: usize,
    },
}
