use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A value falls outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Input data violates a structural invariant.
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Integration produced a non-finite state.
    #[error("flow diverged at t = {time} (atom {atom})")]
    Divergence { time: f64, atom: usize },

    /// The Filippov iteration did not reach the requested tolerance.
    #[error("iteration did not converge after {iterations} stages (last residual {last:e})")]
    NonConvergence {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    /// The operation declined to run, e.g. a hypothesis check failed or the
    /// grid is too coarse for the requested construction.
    #[error("refused: {0}")]
    Refusal(String),

    /// A finite family did not contain a clustered subsequence.
    #[error("insufficient family: {0}")]
    InsufficientFamily(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("scenario file: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
