use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("shape mismatch at {node}: expected {expected}, got {actual}")]
    ShapeMismatch {
        node: String,
        expected: String,
        actual: String,
    },
    #[error("non-finite value produced at {node}")]
    Overflow { node: String },
    #[error("input {node} is not bound")]
    Unbound { node: String },
    #[error("backward called before evaluate")]
    NotEvaluated,
    #[error("loss {node} is not a scalar (shape {shape:?})")]
    NonScalarLoss { node: String, shape: Vec<usize> },
    #[error("{0}")]
    Invalid(String),
}

impl GraphError {
    pub(crate) fn shape(
        node: impl Into<String>,
        expected: impl Into<String>,
        actual: impl Into<String>,
    ) -> Self {
        GraphError::ShapeMismatch {
            node: node.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}
