//! Small differentiable-computation substrate: tensors, a reverse-mode tape,
//! Adam and a binary checkpoint format.

mod adam;
pub mod checkpoint;
pub mod graph;
pub mod ops;
mod params;
mod tensor;

use thiserror::Error;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use graph::{Graph, Var};
pub use params::{Gradients, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("{0}: no inputs")]
    Empty(&'static str),
    #[error("expected a scalar, got shape {0:?}")]
    NonScalar(Vec<usize>),
    #[error("unknown parameter `{0}`")]
    MissingParam(String),
    #[error("unexpected parameter `{0}`")]
    UnexpectedParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("tensor `{name}` has shape {found:?}, expected {expected:?}")]
    Incompatible {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("gradient/parameter keys differ: {0}")]
    KeyMismatch(String),
    #[error("non-finite values in `{0}`")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
