use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input data (shapes, missing outputs, indices).
    #[error("input error: {0}")]
    Input(String),

    /// Invalid configuration or hyperparameter.
    #[error("config error: {0}")]
    Config(String),

    /// Cholesky hit a non-positive pivot.
    #[error("matrix is not positive definite (pivot {pivot})")]
    Definiteness { pivot: usize },

    /// Eigenvalues with imaginary parts above tolerance were requested.
    #[error("complex spectrum: max |imag| = {max_imag:e} exceeds tolerance {tolerance:e}")]
    Spectrum { max_imag: f64, tolerance: f64 },

    /// A direction has non-positive quadratic form under the constraint matrix.
    #[error("degenerate direction in column {column}: quadratic form {value:e}")]
    Degenerate { column: usize, value: f64 },

    /// Dense eigensolver did not converge.
    #[error("eigensolver failed to converge")]
    NoConvergence,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable class, used for CLI exit reporting.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Input(_) => "input",
            Error::Config(_) => "config",
            Error::Definiteness { .. } => "definiteness",
            Error::Spectrum { .. } => "spectrum",
            Error::Degenerate { .. } => "degenerate",
            Error::NoConvergence => "no-convergence",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Serde(_) => "serialization",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
