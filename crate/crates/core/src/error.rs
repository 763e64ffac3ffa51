//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A scenario or training configuration failed validation.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input data (detector CSV, checkpoint, scenario file) is malformed.
    #[error("invalid data in {path}: {reason}")]
    Data { path: PathBuf, reason: String },

    /// Malformed data without a file path (in-memory matrices, logs).
    #[error("invalid data: {0}")]
    Malformed(String),

    /// A simulator invariant was violated (caller error, e.g. a
    /// non-positive gap handed to the car-following model).
    #[error("simulation error: {0}")]
    Sim(String),

    /// A checkpoint could not be loaded or does not match the network shape.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("TOML parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn sim(msg: impl Into<String>) -> Self {
        Error::Sim(msg.into())
    }

    pub fn malformed(msg: impl Into<String>) -> Self {
        Error::Malformed(msg.into())
    }

    pub fn checkpoint(msg: impl Into<String>) -> Self {
        Error::Checkpoint(msg.into())
    }
}
