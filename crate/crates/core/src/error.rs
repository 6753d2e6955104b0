use thiserror::Error;

use crate::linalg::LinalgError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("category {label:?} of {axis} has zero marginal probability")]
    DegenerateCategory { axis: &'static str, label: String },

    #[error("alphabet too large: {cells} cells exceeds the limit of {limit}")]
    Capacity { cells: usize, limit: usize },

    #[error(
        "covariance of the F-Net outputs is singular (smallest eigenvalue {min_eigenvalue:e}); \
         use loss eps > 0"
    )]
    SingularCovariance { min_eigenvalue: f64 },

    #[error("{encoder} embedding collapsed: covariance has {rank} of {dim} usable directions")]
    DegenerateEmbedding {
        encoder: &'static str,
        rank: usize,
        dim: usize,
    },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("index {index} out of range for {what} of length {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("serialization error: {0}")]
    Serialization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::ContractViolation(msg.into())
}
