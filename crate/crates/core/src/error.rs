use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model specification: {0}")]
    InvalidSpec(ValidationReport),

    #[error("time {t} outside the horizon [0, {horizon}]")]
    OutOfRangeTime { t: f64, horizon: f64 },

    #[error("parse error in field `{field}`{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Parse {
        field: String,
        line: Option<usize>,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("theta bound violated at step {step}, component {component}: |{value}| > {bound}")]
    PolicyBoundViolation {
        step: usize,
        component: usize,
        value: f64,
        bound: f64,
    },

    #[error("grid mismatch for {what}: expected {expected}, found {found}")]
    GridMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-positive density at node {node}")]
    NonPositiveDensity { node: usize },

    #[error("Riccati solution is not finite at node {node}")]
    Blowup { node: usize },

    #[error("Riccati solution lost positive semidefiniteness at node {node} (min eigenvalue {eigenvalue})")]
    PsdViolation { node: usize, eigenvalue: f64 },

    #[error("observation covariance R is singular at node {node}")]
    SingularR { node: usize },

    #[error("index order violated: s = {s} > t = {t}")]
    IndexOrder { s: usize, t: usize },

    #[error("unsupported estimator: {0}")]
    UnsupportedEstimator(&'static str),

    #[error("worst-case search over a state of dimension {n} is not supported (n must be 1 or 2)")]
    UnsupportedDimension { n: usize },

    #[error("{strategies} adversary strategies exceed the enumeration budget {budget}")]
    BudgetExceeded { strategies: f64, budget: f64 },

    #[error("tilt |theta|*sqrt(dt/R) = {tilt} must be < 1")]
    InvalidTilt { tilt: f64 },

    #[error("{have} samples is below the required {need}")]
    InsufficientSample { have: usize, need: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
