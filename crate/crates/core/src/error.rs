use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input data violates a documented invariant (bad box, overlapping spans, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Malformed JSON or PPM input. `path` is a JSON path or byte offset description.
    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("decoding error: {0}")]
    Decode(String),

    #[error("sweep interrupted after {completed} cells")]
    Interrupted { completed: usize },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end: 2 for bad input, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Parse { .. } | Error::Config(_) | Error::Json(_) => 2,
            _ => 1,
        }
    }
}
