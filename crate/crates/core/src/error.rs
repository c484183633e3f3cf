use thiserror::Error;

/// Errors produced anywhere in the inference pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Inputs have incompatible shapes or are empty.
    #[error("structural error: {0}")]
    Structure(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    /// `q` puts mass on an atom where `p` has none.
    #[error("absolute continuity violated at atom {index}: q = {q}, p = 0")]
    AbsoluteContinuity { index: usize, q: f64 },

    /// Problem too large for an exact solver, or too few samples for a statistic.
    #[error("size error: {0}")]
    Size(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// An iterative solver stopped at its iteration cap. Carries the best iterate.
    #[error("no convergence after {iterations} iterations (residual {residual:.3e}, value {value})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        value: f64,
        best: Vec<f64>,
    },

    #[error("optimizer failure: {0}")]
    Optimizer(String),

    #[error("replicate {index} failed: {source}")]
    Replicate {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
