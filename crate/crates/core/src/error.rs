use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {message}")]
    Codec { path: PathBuf, message: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid manifest: {0}")]
    Invariant(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("scale {scale} not supported by operator {method_id}; supported scales: {supported:?}")]
    UnsupportedScale {
        method_id: String,
        scale: f64,
        supported: Vec<f64>,
    },

    #[error("external command for {method_id} failed with {status}: {stderr}")]
    ExternalCommand {
        method_id: String,
        status: String,
        stderr: String,
    },

    #[error("no positive partner available for group (method_id={method_id}, scale={scale}, role={role})")]
    SamplerStarvation {
        method_id: String,
        scale: f64,
        role: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("incompatible checkpoint: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Data(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures rooted in numerics (non-finite loss, singular solve).
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Numeric(_))
    }
}
