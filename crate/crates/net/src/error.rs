use cad_autodiff::AutodiffError;
use cad_core::{DatasetError, GeometryError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("grid spec mismatch: {0}")]
    SpecMismatch(String),
    #[error("both labeled and unlabeled batches are empty")]
    EmptyBatch,
    #[error("training data: {0}")]
    Data(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub(crate) fn config_err(msg: impl Into<String>) -> NetError {
    NetError::Config(msg.into())
}
