use nalgebra::DMatrix;
use thiserror::Error;

/// Errors raised across the solver stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A solver produced a non-finite iterate. `last_finite` carries the last
    /// iterate that was still finite, when one exists.
    #[error("divergence in {context}: {reason}")]
    Divergence {
        context: String,
        reason: String,
        last_finite: Option<Box<DMatrix<f64>>>,
    },

    #[error("step size underflow at t = {t} (h = {h:e}); problem may be stiff")]
    Stiffness { t: f64, h: f64 },

    #[error("relative error undefined: {0}")]
    UndefinedError(String),

    #[error("basis derivative check failed for entry {index} ({name}): relative error {rel_err:e}")]
    BasisCheck { index: usize, name: String, rel_err: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// Prefix the context of a divergence error, leaving other variants untouched.
    pub fn with_context(self, prefix: impl AsRef<str>) -> Self {
        match self {
            Error::Divergence {
                context,
                reason,
                last_finite,
            } => Error::Divergence {
                context: format!("{}: {}", prefix.as_ref(), context),
                reason,
                last_finite,
            },
            other => other,
        }
    }

    /// Broad failure class, used by the CLI for exit codes.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidGrid(_) | Error::Dimension { .. } | Error::Config(_) | Error::BasisCheck { .. } => {
                ErrorClass::Config
            }
            Error::Divergence { .. } | Error::Stiffness { .. } | Error::UndefinedError(_) => ErrorClass::Solver,
            Error::Io(_) | Error::Parse(_) => ErrorClass::Io,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Solver,
    Io,
}

pub type Result<T> = std::result::Result<T, Error>;
