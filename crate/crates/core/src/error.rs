use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("temporary impact f({a}) = {value} is not positive")]
    NonPositiveTemporaryImpact { a: f64, value: f64 },

    #[error("zeta denominator kappa - g0/2 - sqrt(phi f0) vanishes")]
    DegenerateZeta,

    #[error("theta0 denominator 1 - zeta exp(2 gamma (T - t)) vanishes at t = {t}")]
    SingularDenominator { t: f64 },

    #[error("limiting-regime formula is not evaluable at the horizon t = {t}")]
    HorizonBoundary { t: f64 },

    #[error("time ordering violated: s = {s} < t = {t}")]
    OrderViolation { t: f64, s: f64 },

    #[error("invalid initial state: {0}")]
    InvalidInitialState(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("adaptive quadrature did not converge within {max_depth} levels on [{a}, {b}]")]
    NonConvergence { a: f64, b: f64, max_depth: u32 },

    #[error("covariance matrix is singular")]
    SingularCovariance,

    #[error("finite-difference residual did not decrease under step refinement ({coarse} -> {fine})")]
    StepTooSmall { coarse: f64, fine: f64 },

    #[error("path {path_index} failed: {source}")]
    PathFailed { path_index: u64, source: Box<Error> },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
