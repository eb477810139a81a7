use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {key}: {message}")]
    Validation { key: String, message: String },

    /// The guiding density vanishes (below floor) at every point needed to
    /// evaluate the law of motion.
    #[error("wavefunction node{}: configuration {positions:?}", time.map(|t| format!(" at t = {t}")).unwrap_or_default())]
    Node { time: Option<f64>, positions: Vec<f64> },

    #[error("jump step guard violated at t = {time}: total rate {total_rate} * dt {dt} = {} > {limit}", total_rate * dt)]
    StepGuard {
        time: f64,
        total_rate: f64,
        dt: f64,
        limit: f64,
    },

    #[error("dimension {dim} exceeds limit {limit} for {method}")]
    DimensionTooLarge {
        dim: usize,
        limit: usize,
        method: &'static str,
    },

    #[error("linear solver did not converge after {iterations} iterations (residual {residual:e})")]
    SolverDidNotConverge { iterations: usize, residual: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn validation(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Validation { .. })
    }
}
