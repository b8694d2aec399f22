use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("coordinate {coord} has zero sample variance")]
    DegenerateCoordinate { coord: usize },

    #[error("need at least {required} distinct knots, found {found}")]
    InsufficientKnots { required: usize, found: usize },

    #[error("non-finite value at position {index}")]
    NonFinite { index: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("missing series in panel: {0}")]
    MissingSeries(&'static str),

    #[error("non-positive {what} {value} at t = {t}")]
    NonPositive {
        what: &'static str,
        t: usize,
        value: f64,
    },

    #[error("growth weight G^(1-gamma) is not finite at t = {t}")]
    GrowthOverflow { t: usize },

    #[error("Gram matrix is not positive definite even after ridge {ridge:e}")]
    NotPositiveDefinite { ridge: f64 },

    #[error("defective pair: left and right eigenvectors are orthogonal in the Gram metric")]
    DefectivePair,

    #[error("eigendecomposition failed to converge")]
    EigenFailure,

    #[error("degenerate iterate: norm collapsed at iteration {iteration}")]
    DegenerateIterate { iteration: usize },

    #[error("eigenfunction not positive on sample at t = {t} (value {value})")]
    NonPositiveEigenfunction { t: usize, value: f64 },

    #[error("bandwidth {bandwidth} must be smaller than the sample size {n}")]
    Bandwidth { bandwidth: usize, n: usize },

    #[error("bootstrap unstable: {failed} of {total} replications failed")]
    BootstrapUnstable { failed: usize, total: usize },

    #[error("criterion infeasible at every grid point")]
    AllInfeasible,

    #[error("fixed point iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("row {row}: {message}")]
    Schema { row: usize, message: String },

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
