use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Input data violates a documented invariant.
    #[error("invalid data: {0}")]
    Data(String),

    /// Caller-supplied configuration or arguments are unusable.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("rank-deficient design matrix: collinear columns [{}]", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{context} did not converge (last iterate {last_iterate:?})")]
    NonConvergence {
        context: String,
        last_iterate: Vec<f64>,
    },
}

/// Coarse classification used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Usage,
            Error::Io { .. } | Error::Parse { .. } | Error::Data(_) | Error::RankDeficient { .. } => {
                ErrorKind::Data
            }
            Error::Numerical(_) | Error::NonConvergence { .. } => ErrorKind::Numerical,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
