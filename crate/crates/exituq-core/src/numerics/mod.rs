//! Dense `f64` numerics: tensors, reverse-mode autodiff, graph kernels,
//! Adam, and finite-difference gradient checking.
//!
//! Everything is plain row-major `Vec<f64>` — no BLAS, no SIMD intrinsics —
//! with loop orders chosen so the inner loop streams contiguously.

mod adam;
mod gradcheck;
mod graph_ops;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{check_gradient, numerical_gradient, GradCheckReport};
pub use graph_ops::{neighbor_mean, neighbor_sum, segment_mean, segment_sum, EdgeList};
pub use tape::{BatchStats, Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

/// Errors raised by tensor and tape operations.
#[derive(Debug, Error)]
pub enum NumericsError {
    /// Operand shapes are incompatible for the requested operation.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A shape/data pair or argument is malformed.
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    /// A computation produced NaN or infinity. Tensors validate eagerly, so
    /// this fires at the first non-finite intermediate, not at the loss.
    #[error("{op}: produced non-finite value {value}")]
    NonFinite { op: &'static str, value: f64 },
    /// An edge or segment id points outside the tensor's rows.
    #[error("{op}: index {index} out of range for {len} rows")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    /// A pooling segment received no rows.
    #[error("segment_mean: segment {segment} is empty")]
    EmptySegment { segment: usize },
    /// Backward was started from a non-scalar node.
    #[error("backward: root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
}

/// Crate-local result alias for numeric operations.
pub type Result<T> = std::result::Result<T, NumericsError>;
