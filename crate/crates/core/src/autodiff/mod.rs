//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! The operator set covers what the open-set model needs: matrix products,
//! convolution, pooling, elementwise maps, reductions, row normalization,
//! row concatenation and a log-softmax that can append a fixed extra logit.
//! [`gradcheck`] compares [`Graph::backward`] against central differences.

mod adam;
mod gradcheck;
mod graph;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{gradcheck, relative_error, CoordError, GradcheckReport, REL_ERROR_FLOOR};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

pub(crate) use graph::log_sum_exp;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {shapes:?}")]
    ShapeMismatch { op: &'static str, shapes: Vec<Vec<usize>> },
    #[error("{op}: row {row} has zero norm")]
    DegenerateRow { op: &'static str, row: usize },
    #[error("{op}: value {value} at index {index} is outside the domain")]
    Domain { op: &'static str, index: usize, value: f64 },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("non-finite value in input {input} at coordinate {index}")]
    NonFinite { input: usize, index: usize },
    #[error("gradcheck step must be positive, got {0}")]
    InvalidStep(f64),
}
