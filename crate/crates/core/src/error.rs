use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument or violated domain precondition.
    #[error("validation: {0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    /// Malformed manifest content; `row` is the 1-based data row.
    #[error("manifest {path} row {row}: {message}")]
    Manifest {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Training diverged; aborted before writing a checkpoint.
    #[error("non-finite loss in {context} at epoch {epoch}")]
    NonFiniteLoss { context: String, epoch: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    /// A pipeline stage was invoked before its inputs exist.
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
