use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the factor-analysis pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("matrix is not positive definite (Cholesky pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("symmetric eigensolver did not converge after {iterations} iterations")]
    EigenNoConvergence { iterations: usize },

    #[error(
        "sample covariance is singular ({reason}); use more samples than variables \
         or enable the ridge regularization option"
    )]
    SingularCovariance { reason: String },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("tolerance ceiling delta_max = {delta_max:e} is degenerate; the sample covariance is (numerically) diagonal")]
    DegenerateTolerance { delta_max: f64 },

    #[error("delta = {delta:e} must lie strictly inside (0, delta_max = {delta_max:e})")]
    DeltaTooLarge { delta: f64, delta_max: f64 },

    #[error("point is outside the dual feasible set: {0}")]
    InfeasiblePoint(String),

    #[error("{solver} reached the iteration cap ({iterations}) with residual {residual:e}")]
    MaxIterations {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("recovery system is inconsistent: residual {residual:e} exceeds {threshold:e}")]
    InconsistentSystem { residual: f64, threshold: f64 },

    #[error("recovered Q is indefinite: minimum eigenvalue {min_eigenvalue:e} below -{tolerance:e}")]
    IndefiniteQ { min_eigenvalue: f64, tolerance: f64 },

    #[error("kernel of the Lambda multiplier is empty")]
    EmptyKernel,

    #[error("parse error at row {row}, column {col}: {message}")]
    Parse {
        row: usize,
        col: usize,
        message: String,
    },

    #[error("matrix asymmetry {asymmetry:e} exceeds tolerance {tolerance:e}")]
    Asymmetry { asymmetry: f64, tolerance: f64 },

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
