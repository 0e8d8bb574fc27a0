use std::io;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Two operands disagree on a dimension.
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Invalid caller input (empty dataset, bad config value, malformed file).
    #[error("invalid input: {0}")]
    Input(String),

    /// A computation produced NaN or infinity, or a matrix was not positive definite.
    #[error("numeric failure at step {step}: {reason}")]
    Numeric { step: usize, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn numeric(step: usize, reason: impl Into<String>) -> Self {
        Error::Numeric {
            step,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Shape {
            context,
            expected,
            actual,
        })
    }
}

pub(crate) fn check_finite(step: usize, what: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(step, format!("non-finite {what}")))
    }
}
