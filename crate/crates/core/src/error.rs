use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the pipeline stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown language code `{0}`")]
    UnknownLanguage(String),

    #[error("registry error: {0}")]
    Registry(String),

    #[error("request validation failed: {0}")]
    Validation(String),

    #[error("transport error for request {request_id}: {message}")]
    Transport { request_id: String, message: String },

    #[error("protocol error: {message} (payload: {payload})")]
    Protocol { message: String, payload: String },

    #[error("scoring error: {0}")]
    Scoring(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
