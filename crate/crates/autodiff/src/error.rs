use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("index {index} out of range 0..{len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_err(msg: impl Into<String>) -> AutodiffError {
    AutodiffError::ShapeMismatch(msg.into())
}
