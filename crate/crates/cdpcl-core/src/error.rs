//! Shared error type for the whole pipeline.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, CdpclError>;

#[derive(Debug, thiserror::Error)]
pub enum CdpclError {
    #[error("{op}: dimension error: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: contract violation: {detail}")]
    Contract { op: &'static str, detail: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: format error at byte {offset}: {detail}")]
    Format { path: PathBuf, offset: u64, detail: String },

    #[error("non-finite loss at iteration {iter}: {detail}")]
    NonFinite { iter: u64, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CdpclError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CdpclError::Io { path: path.into(), source }
    }
}
