use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A density (or other state value) outside the admissible interval.
    #[error("value {value} outside admissible range [{lo}, {hi}]")]
    Domain { value: f64, lo: f64, hi: f64 },

    /// Inconsistent or unusable configuration detected before a run starts.
    #[error("configuration error: {0}")]
    Config(String),

    /// Array shapes that do not match the network, mesh or time grid.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A point or starting value that violates the feasible set.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Every invariant violation found while validating an input.
    #[error("validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    /// Non-finite values or a linear solve that failed to converge.
    #[error("numerical failure at step {step}: {reason}")]
    Numerical { step: usize, reason: String },

    /// Malformed input text (mesh or scenario files).
    #[error("parse error in {path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
