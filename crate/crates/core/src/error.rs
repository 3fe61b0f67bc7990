use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not converge for {what}: value {value:e}, residual estimate {residual:e}")]
    Quadrature {
        what: String,
        value: f64,
        residual: f64,
    },

    #[error("divergent integral: {0}")]
    Divergent(String),

    #[error("blow-up at t = {time} (step {step}): |u| = {magnitude:e} at site {site}")]
    BlowUp {
        time: f64,
        step: usize,
        site: usize,
        magnitude: f64,
    },

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("cost guard: {0}")]
    CostGuard(String),

    #[error("non-finite kernel sample {value} at cell {cell}")]
    NonFiniteKernel { cell: usize, value: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
