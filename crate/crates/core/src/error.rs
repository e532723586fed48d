use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("unknown problem `{0}`")]
    UnknownProblem(String),
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("signal is degenerate (A x0 = 0)")]
    DegenerateSignal,
    #[error("matrix has non-finite entries")]
    InvalidMatrix,
    #[error("SVD did not converge")]
    FactorizationFailed,
    #[error("threshold constant c = {0} outside (0, 1)")]
    InvalidThresholdConstant(f64),
    #[error("system is singular: rho = 0 with a zero singular value")]
    SingularSystem,
    #[error("rho = {0} outside the domain (0, inf)")]
    OutOfDomain(f64),
    #[error("epsilon root not applicable: no trivial singular values")]
    NotApplicable,
    #[error("Newton iteration did not converge within {iters} iterations")]
    NoConvergence { iters: usize },
    #[error("derivative vanished at rho = {0}")]
    DerivativeVanished(f64),
    #[error("covariance matrix is not positive definite")]
    InvalidCovariance,
    #[error("covariance has zero trace")]
    DegenerateCovariance,
    #[error("worst-case perturbation undefined for x = 0 or zero residual")]
    Undefined,
    #[error("L-curve has no corner (curvature never positive)")]
    NoCorner,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("malformed container: {0}")]
    Format(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
