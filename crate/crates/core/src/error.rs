use thiserror::Error;

/// Errors raised by the core numerical layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("length {0} is not a power of two")]
    Length(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid block shape: {0}")]
    Shape(String),

    #[error("history engine state error: {0}")]
    State(String),

    #[error("startup regime: corrected sum at step {n} needs n >= {min}")]
    Startup { n: usize, min: usize },

    #[error("fixed point failed to converge at step {step} after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        step: usize,
        iterations: usize,
        residual: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
