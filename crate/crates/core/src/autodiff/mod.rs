//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Tape`] records eagerly-evaluated tensor operations; calling
//! [`Tape::backward`] on a scalar loss fills the gradient slot of every
//! parameter the loss depends on. The operator set is exactly what the
//! rating models need: no broadcasting rules beyond the specific ops,
//! no higher-order derivatives, no GPU.

mod check;
mod params;
mod tape;

pub use check::{grad_check, GradCheckReport};
pub use params::{BoundParams, Init, ParamId, ParamStore};
pub use tape::{Tape, Tensor, Var};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank-{expected} input, got shape {got:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        got: Vec<usize>,
    },
    #[error("backward needs a scalar loss, got shape {got:?}")]
    NonScalarLoss { got: Vec<usize> },
    #[error("index {index} out of bounds for table of {len} rows")]
    IndexOutOfBounds { index: u32, len: usize },
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint {path}: {reason}")]
    Corrupt { path: String, reason: String },
}
