//! Parameter storage, the gradient tape, Adam, and the finite-difference
//! oracle. All numerics are 64-bit and deterministic given a seed.

pub mod adam;
pub mod checkpoint;
pub mod finite_diff;
pub mod params;
pub mod spline;
pub mod tape;
pub mod tensor;

pub use adam::AdamState;
pub use finite_diff::finite_diff_grad;
pub use params::{forward_backward, forward_value, Binding, ParamStore};
pub use spline::SplineGrid;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite values produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("tensor shape {shape:?} does not match {len} values")]
    ShapeLenMismatch { shape: Vec<usize>, len: usize },
    #[error("tensor contains non-finite values")]
    NonFiniteTensor,
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("parameter `{name}` has shape {expected:?}, got {got:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
    #[error("non-finite loss while perturbing `{param}`[{index}]")]
    NonFiniteLoss { param: String, index: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
