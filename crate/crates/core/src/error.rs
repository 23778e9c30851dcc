use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum EitError {
    /// Invalid parameters or incompatible inputs.
    #[error("configuration error: {0}")]
    Config(String),

    /// A file could not be parsed.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A structure violates one of its invariants.
    #[error("validation error: {0}")]
    Validation(String),

    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A factorization or iterative solve failed.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl EitError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EitError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        EitError::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit code: 1 for numerical failures, 2 for input and validation errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            EitError::Numerical(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, EitError>;
