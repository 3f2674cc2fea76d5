use thiserror::Error;

#[derive(Debug, Error)]
pub enum GreensError {
    #[error("basis construction failed: {0}")]
    Basis(String),

    #[error("imaginary time {tau} outside [0, {beta}]")]
    Domain { tau: f64, beta: f64 },

    #[error("Matsubara iteration did not converge in {iterations} iterations (last residual {last:e})")]
    NoConvergence {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Solver(#[from] fastvie::Error),

    #[error("basis file: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, GreensError>;
