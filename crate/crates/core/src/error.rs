use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical procedure produced a non-finite or otherwise unusable value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Cholesky factorization hit a non-positive pivot.
    #[error("matrix is not positive definite: pivot {pivot} has value {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    /// A bracketing root finder ran out of iterations.
    #[error("root finder did not converge after {iterations} iterations (target {target}, bracket [{lo}, {hi}])")]
    NoConvergence {
        iterations: usize,
        target: f64,
        lo: f64,
        hi: f64,
    },

    /// Every particle weight vanished at some step of a filter run.
    #[error("filter degenerated at step {step}: all importance weights are zero")]
    DegenerateFilter { step: usize },

    /// Particle sets whose values are all equal have no density estimate.
    #[error("degenerate support: {0}")]
    DegenerateSupport(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
