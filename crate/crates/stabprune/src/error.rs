use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A cell of an input file failed to parse. Row and column are 1-based
    /// and count the header line if one is present.
    #[error("parse error at row {row}, column {column} of {path}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    /// Invalid argument, configuration, or input shape.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// Numerical failure (non-positive-definite matrix, singular system, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Coordinate descent exhausted its sweep budget.
    #[error("solver did not converge at grid index {lambda_index} after {sweeps} sweeps")]
    NonConvergence { lambda_index: usize, sweeps: usize },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code: 1 for usage/input errors, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) | Error::NonConvergence { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
