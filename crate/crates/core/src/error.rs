use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the estimation, testing and evaluation pipelines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{path}: line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        column: String,
        message: String,
    },

    #[error("degenerate donors: ridge system is singular (lambda = 0, zero baseline column)")]
    DegenerateDonors,

    #[error("R^2 undefined: reference data is constant")]
    ConstantReference,

    #[error("hyperparameter tuning failed: every configuration errored ({0})")]
    TuningFailed(String),

    #[error("method {0} runs over many trials; use the evaluation harness")]
    HarnessOnly(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Validation failures map to exit code 2, everything else to 3.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid(_) | Error::Shape(_) | Error::Parse { .. } | Error::HarnessOnly(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
