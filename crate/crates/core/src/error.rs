use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a mathematical precondition (zero-norm row, empty label set, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid configuration value or missing required component.
    #[error("config error: {0}")]
    Config(String),

    /// Shape disagreement between two operands.
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    /// Malformed dataset, checkpoint or config text.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    /// The finite-difference oracle evaluated a non-finite value.
    #[error("oracle error: {0}")]
    Oracle(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: loss = {value}")]
    Divergence { step: usize, value: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
