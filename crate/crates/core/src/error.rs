use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by front-ends to pick exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("weight block supplied for unconnected layer pair ({0},{1})")]
    UnmaskedWeight(usize, usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("enumeration needs 2^{needed} terms but the cap is 2^{cap}")]
    EnumerationCap { needed: usize, cap: usize },
    #[error("{what} has {size} entries, above the cap of {cap}")]
    SizeCap {
        what: &'static str,
        size: usize,
        cap: usize,
    },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("non-finite parameters after update {update}")]
    Diverged { update: u64 },
    #[error("LP solver failed on configuration {config}: {message}")]
    Lp { config: String, message: String },
    #[error("malformed {format} data: {message}")]
    Format {
        format: &'static str,
        message: String,
    },
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NonFinite(_) | Error::Diverged { .. } | Error::Lp { .. } => ErrorKind::Numerical,
            Error::Io(_) => ErrorKind::Io,
            Error::Format { .. } | Error::Json(_) => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn format(format: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            format,
            message: message.into(),
        }
    }
}
