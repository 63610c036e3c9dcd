//! Dense 2-D tensors and a reverse-mode differentiation graph.
//!
//! Only the operations the contrastive objective needs are provided:
//! matmul, add/sub, bias rows, ReLU, row-wise L2 normalization, transpose,
//! `exp`/`log`, row log-sum-exp, diagonal/trace and a handful of scalar
//! reductions. Values are stored as [`Scalar`] (`f32` for training, `f64`
//! for gradient checks) and every reduction accumulates in `f64`.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
pub use graph::{Graph, NodeId};
pub use tensor::{Scalar, Tensor2};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {}x{} and {}x{}", left.0, left.1, right.0, right.1)]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("tensor {rows}x{cols} needs {} values, got {len}", rows * cols)]
    LengthMismatch { rows: usize, cols: usize, len: usize },
    #[error("ragged rows: expected {expected} columns, got {got}")]
    RaggedRows { expected: usize, got: usize },
    #[error("{op}: non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("{op}: expected a 1x1 node, got {}x{}", shape.0, shape.1)]
    NotScalar { op: &'static str, shape: (usize, usize) },
    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
    #[error("backward already ran on this graph; call reset_grads first")]
    BackwardAlreadyRun,
    #[error("graph is not acyclic: node {node} references node {input}")]
    Cycle { node: usize, input: usize },
    #[error("unknown node {0}")]
    UnknownNode(usize),
}
