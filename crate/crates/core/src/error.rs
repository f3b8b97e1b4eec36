use thiserror::Error;

/// Errors raised by the distribution, numerics and estimation layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("argument outside the domain: {0}")]
    Domain(String),

    #[error("matrix is singular (det = {det:e})")]
    Singular { det: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("quadrature did not converge: refined and coarse results differ by {diff:e} (tol {tol:e})")]
    QuadratureNonConvergence { diff: f64, tol: f64 },

    #[error("sample too small: need at least {needed} observations, got {got}")]
    SampleTooSmall { needed: usize, got: usize },

    #[error("degenerate sample: all observations are equal")]
    DegenerateSample,

    #[error("all Tukey weights vanished (every residual exceeds b = {b})")]
    AllWeightsZero { b: f64 },

    #[error("fixed-point iteration for (A, a) did not converge after {iterations} iterations")]
    InnerNonConvergence { iterations: usize },

    #[error("cannot summarize an empty set of estimates")]
    EmptyEstimates,

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

pub type Result<T> = std::result::Result<T, Error>;
