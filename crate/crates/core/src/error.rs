use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("value {value} outside the domain [-1, 1]")]
    Domain { value: f64 },

    #[error("operator with growth order p = {0} does not define a reproducing kernel Hilbert space (need p > 1)")]
    NotRkhs(f64),

    #[error("operator is not admissible: {0}")]
    NotAdmissible(String),

    #[error("series truncation at L_max = {l_max} leaves tail bound {tail:.3e}, above the allowed {allowed:.3e}")]
    InsufficientTruncation { l_max: usize, tail: f64, allowed: f64 },

    #[error("unsupported Matérn smoothness nu = {0}; supported values are 0.5, 1.5, 2.5")]
    UnsupportedSmoothness(f64),

    #[error("kernel is not positive definite: spectral coefficient c_{degree} = {value:.3e}")]
    NotPositiveDefinite { degree: usize, value: f64 },

    #[error("matrix is not positive semidefinite: minimum eigenvalue {min_eigenvalue:.3e}")]
    NotPsd { min_eigenvalue: f64 },

    #[error("replicates have non-constant sample counts; the block fast path needs a constant r")]
    RaggedReplicates,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("cross-validation failed: {0}")]
    CrossValidation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical kernels (solver, factorizations).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence { .. }
                | Error::NumericalBreakdown(_)
                | Error::NotPsd { .. }
                | Error::NotPositiveDefinite { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
