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

    #[error("unsupported format: {0}")]
    Format(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate region: {0}")]
    DegenerateRegion(String),

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported density file version {found} (expected {expected})")]
    BadVersion { expected: u8, found: u8 },

    #[error("length mismatch: header declares {expected} bytes of payload, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("head {index}: {source}")]
    Head {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{method}: {source}")]
    Method {
        method: String,
        #[source]
        source: Box<Error>,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_head(self, index: usize) -> Self {
        Error::Head {
            index,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad user input (files, annotations,
    /// parameters) rather than a defect in the library.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Internal(_) => false,
            Error::Head { source, .. } | Error::Method { source, .. } => source.is_input_error(),
            _ => true,
        }
    }
}
