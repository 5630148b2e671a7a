use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    Dimension {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite value produced by {0}")]
    Numeric(&'static str),
    #[error("state error: {0}")]
    State(String),
    #[error("loss function is not deterministic: {first} != {second}")]
    Determinism { first: f64, second: f64 },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, KernelError>;

pub(crate) fn dim_err(op: &'static str, expected: impl ToString, got: impl ToString) -> KernelError {
    KernelError::Dimension {
        op,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
