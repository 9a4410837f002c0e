use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed image data: {0}")]
    Format(String),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("singular system: {0}")]
    Singular(&'static str),

    #[error("estimation failed: {0}")]
    EstimationFailed(String),

    #[error("transform is not invertible (det = {0:e})")]
    NotInvertible(f64),

    #[error("segmenter error: {0}")]
    Segmenter(String),

    #[error("segmenter protocol error: {0}")]
    Protocol(String),

    #[error("evaluation input mismatch: {0}")]
    Mismatch(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 configuration, 2 I/O, 3 segmenter.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Segmenter(_) | Error::Protocol(_) => 3,
            _ => 2,
        }
    }
}
