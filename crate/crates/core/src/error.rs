//! Error taxonomy shared by every module.
//!
//! Variants are grouped by what the caller can do about them: fix the
//! input file (`Parse`, `Io`), fix the request (`Domain`, `Shape`,
//! `Bounds`, `Incompatible`), or treat the run as numerically failed
//! (`Numeric`, `Convergence`, `Training`).

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A text input file violated its format.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Underlying filesystem failure, annotated with the path.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// An index referred outside its container.
    #[error("out of bounds: {0}")]
    Bounds(String),

    /// A value was outside the documented domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two arrays or models that must agree in shape did not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A computation produced a non-finite or otherwise unusable value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An iterative solver stopped before reaching its tolerance.
    #[error(
        "solver did not converge: residual {residual:.3e} > tolerance {tolerance:.3e} \
         after {iterations} iterations"
    )]
    Convergence {
        residual: f64,
        tolerance: f64,
        iterations: usize,
    },

    /// Training failed; `epoch` is the last epoch that ran.
    #[error("training failed at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    /// A checkpoint or cache does not belong to the supplied dataset.
    #[error("incompatible artifacts: {0}")]
    Incompatible(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
