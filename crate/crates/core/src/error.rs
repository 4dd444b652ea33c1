use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate input: channel {channel} has zero variance")]
    ZeroVariance { channel: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("numerical failure in term `{term}`")]
    Numerical { term: String },

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("unsupported for framework {framework}: {reason}")]
    Unsupported { framework: String, reason: String },

    #[error("malformed manifest {path}: {reason}")]
    MalformedManifest { path: PathBuf, reason: String },

    #[error("shape mismatch in {path}: expected {expected} bytes, found {found}")]
    ShapeMismatch { path: PathBuf, expected: usize, found: usize },

    #[error("checksum mismatch for {path}")]
    Checksum { path: PathBuf },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::result::Result<T, std::io::Error> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io { path: path.into(), source })
    }
}
