use thiserror::Error;

/// Errors raised while building problems, evaluating the objective or running solvers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite entry in {what} at index {index}")]
    NonFiniteEntry { what: &'static str, index: usize },

    #[error("hyperparameter {name} must be positive, got {value}")]
    NonPositiveHyperparameter { name: &'static str, value: f64 },

    #[error("column {column} has zero variance")]
    ZeroVarianceColumn { column: usize },

    #[error("response has zero variance")]
    ZeroVarianceResponse,

    #[error("precision entry d[{index}] = {value} is not strictly positive and finite")]
    NonPositivePrecision { index: usize, value: f64 },

    #[error("invalid box bounds [{lower}, {upper}]: need 0 < lower < upper < inf")]
    InvalidBounds { lower: f64, upper: f64 },

    #[error("index {index} out of range for p = {p}")]
    IndexOutOfRange { index: usize, p: usize },

    #[error("malformed constraint: {0}")]
    MalformedConstraint(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("nonpositive weight {value} at position {index}")]
    NonPositiveWeight { index: usize, value: f64 },

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(&'static str),

    #[error("log argument is nonpositive ({value}); numerical failure")]
    NonPositiveLogArgument { value: f64 },

    #[error("conjugate gradient did not converge after {iterations} iterations (residual {residual:.3e})")]
    CgNotConverged { iterations: usize, residual: f64 },

    #[error("alternating projection did not reach feasibility after {sweeps} sweeps (infeasibility {infeasibility:.3e})")]
    ProjectionNotConverged { sweeps: usize, infeasibility: f64 },

    #[error("D point is outside the box at index {index} (value {value})")]
    OutsideBox { index: usize, value: f64 },

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("empty truth set")]
    EmptyTruth,

    #[error("csv: {0}")]
    Csv(String),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NotPositiveDefinite(_)
            | Error::NonPositiveLogArgument { .. }
            | Error::CgNotConverged { .. }
            | Error::ProjectionNotConverged { .. } => true,
            Error::AtIteration { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
