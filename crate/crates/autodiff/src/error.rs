use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdError {
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    Shape {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("tensor shape {shape:?} needs {expected} values, got {got}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in tensor at flat index {index}")]
    NonFinite { index: usize },
    #[error("output node {node} is not scalar (shape {shape:?})")]
    NonScalarOutput { node: usize, shape: Vec<usize> },
    #[error("parameter layouts differ")]
    LayoutMismatch,
    #[error("expected {expected} inputs, got {got}")]
    InputCount { expected: usize, got: usize },
    #[error("index {index} out of range for {len} columns at node {node}")]
    IndexOutOfRange { node: usize, index: f64, len: usize },
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("empty batch")]
    EmptyBatch,
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("tensor file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AdError>;
