use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or argument.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed or unusable input data.
    #[error("data error: {0}")]
    Data(String),

    /// Input that is well-formed but numerically degenerate (zero variances,
    /// non-positive-definite matrices, vanishing traces).
    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("lasso for column {column} did not converge after {sweeps} sweeps (KKT residual {kkt_residual:.3e})")]
    NonConvergence {
        column: usize,
        sweeps: usize,
        kkt_residual: f64,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numerical degeneracy.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Dimension(_) | Error::Io { .. } => 3,
            Error::Degenerate(_) | Error::NonConvergence { .. } => 4,
        }
    }
}
