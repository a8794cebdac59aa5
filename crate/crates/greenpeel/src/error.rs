use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("spatial dimension must be 1, 2 or 3, got {0}")]
    InvalidDimension(usize),

    #[error("grid of {requested} nodes exceeds the configured cap of {cap}")]
    MemoryCapExceeded { requested: usize, cap: usize },

    #[error("n = {n} must be divisible by 2^L = {divisor} to build {levels} levels")]
    Divisibility { n: usize, levels: usize, divisor: usize },

    #[error("coefficient must be positive at every flux point; found {value} at flux point near node {node}, axis {axis}")]
    EllipticityViolation { node: usize, axis: usize, value: f64 },

    #[error("stiffness matrix is not positive definite (factorization failed at pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("solver failed to reach tolerance: relative residual {residual:.3e} after {iterations} iterations")]
    SolverFailure { residual: f64, iterations: usize },

    #[error("dense kernel of {requested} rows exceeds the dense cap of {cap}")]
    DenseCapExceeded { requested: usize, cap: usize },

    #[error("vector length {got} does not match expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("covariance not factorizable: Cholesky failed after {escalations} jitter escalations (last jitter {last_jitter:.3e})")]
    CovarianceNotFactorizable { escalations: usize, last_jitter: f64 },

    #[error("columns are not orthonormal: max deviation {deviation:.3e} exceeds {tolerance:.1e}")]
    NotOrthonormal { deviation: f64, tolerance: f64 },

    #[error("insufficient probe diversity at level {level}: starved boxes {boxes:?}")]
    InsufficientProbeDiversity { level: usize, boxes: Vec<usize> },

    #[error("training set provenance does not match the requested configuration: {0}")]
    ProvenanceMismatch(String),

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("{0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, Error>;
