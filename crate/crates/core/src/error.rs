use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the reconstruction stack.
#[derive(Debug, Error)]
pub enum CtError {
    /// Invalid geometry, mask, network or training configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Array shapes that do not agree with each other or with a geometry.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Input data outside an operator's domain (e.g. negative line integrals).
    #[error("input error: {0}")]
    Input(String),

    /// API misuse such as calling backward on a non-scalar.
    #[error("usage error: {0}")]
    Usage(String),

    /// NaN/Inf during training or evaluation.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Malformed file contents (bad magic, version or metadata).
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// File payload shorter or longer than its header promises.
    #[error("length error in {path}: expected {expected} bytes, found {actual}")]
    Length {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CtError {
    pub fn config(msg: impl Into<String>) -> Self {
        CtError::Config(msg.into())
    }

    pub fn dim(msg: impl Into<String>) -> Self {
        CtError::Dimension(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CtError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        CtError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            CtError::Config(_) | CtError::Dimension(_) | CtError::Input(_) | CtError::Usage(_) => 2,
            CtError::Numerical(_) => 3,
            CtError::Format { .. } | CtError::Length { .. } | CtError::Io { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, CtError>;
