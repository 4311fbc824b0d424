use thiserror::Error;

use crate::signal::SignalError;
use crate::tensor::TensorError;

/// Crate-level error for model, training and workbench operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the failure is attributable to input data rather than usage.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Data(_)
                | Error::Integrity(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::Signal(SignalError::Data(_))
                | Error::Tensor(TensorError::Shape { .. })
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
