use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by front ends to pick an exit status or an
/// HTTP status without matching every variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Usage,
    Data,
    Training,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unsupported schema version {found} (supported: {supported})")]
    UnsupportedSchema { found: u64, supported: u64 },

    #[error("model error: {0}")]
    Model(String),

    #[error("pretrained weights unavailable for `{source_id}`: {reason}")]
    WeightsUnavailable { source_id: String, reason: String },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("training failed: {0}")]
    Training(String),

    #[error("non-finite loss in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("model `{0}` not found")]
    NotFound(String),

    #[error("artifact `{model_id}` already exists")]
    IdCollision { model_id: String },

    #[error("checksum mismatch for {path}: expected {expected}, got {actual}")]
    ChecksumMismatch {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Io { .. } | Error::IdCollision { .. } => ErrorCategory::Io,
            Error::InvalidArgument(_) => ErrorCategory::Usage,
            Error::Training(_) | Error::NonFiniteLoss { .. } | Error::Tensor(_) => {
                ErrorCategory::Training
            }
            Error::Decode { .. }
            | Error::Dataset(_)
            | Error::Schema(_)
            | Error::UnsupportedSchema { .. }
            | Error::Model(_)
            | Error::WeightsUnavailable { .. }
            | Error::Shape { .. }
            | Error::NotFound(_)
            | Error::ChecksumMismatch { .. } => ErrorCategory::Data,
        }
    }
}
