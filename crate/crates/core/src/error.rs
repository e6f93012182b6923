use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("covariance (sub)matrix is not positive definite: {0}")]
    SingularModel(String),

    #[error("risk parameter phi must be positive, got {0}")]
    NonPositivePhi(f64),

    #[error("active-set iteration limit reached after {0} iterations")]
    QpIterationLimit(usize),

    #[error("empty range: phi_min = {lo} must be below phi_max = {hi}")]
    EmptyRange { lo: f64, hi: f64 },

    #[error("phi = {phi} lies outside the covered domain [{lo}, {hi}]")]
    OutOfDomain { phi: f64, lo: f64, hi: f64 },

    #[error("value {value} is not bracketed by [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("zero pivot {pivot:e} in tridiagonal row {row}")]
    ZeroPivot { row: usize, pivot: f64 },

    #[error("micro-iterations did not converge within {max_iters} iterations (last increment {last_diff:e})")]
    NoConvergence { max_iters: usize, last_diff: f64 },

    #[error("non-positive phi {value:e} in cell {cell}")]
    NonPositiveCell { cell: usize, value: f64 },

    #[error("comparison bound violated: phi = {value} in cell {cell} exceeds {bound}")]
    BoundViolation { cell: usize, value: f64, bound: f64 },

    #[error("time layer {layer}: {source}")]
    AtLayer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid limits: {0}")]
    InvalidLimits(String),

    #[error("profile integration failed: step size underflow at xi = {xi}")]
    StiffnessFailure { xi: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-positive price {value} for {ticker} on {date}")]
    NonPositivePrice {
        ticker: String,
        date: String,
        value: f64,
    },

    #[error("risk aversion must exceed 1, got {0}")]
    InvalidRiskAversion(f64),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Numerical failures (as opposed to bad input or configuration).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NoConvergence { .. }
            | Error::NonPositiveCell { .. }
            | Error::BoundViolation { .. }
            | Error::ZeroPivot { .. }
            | Error::QpIterationLimit(_)
            | Error::StiffnessFailure { .. } => true,
            Error::AtLayer { source, .. } | Error::Stage { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn at_layer(self, layer: usize) -> Error {
        Error::AtLayer {
            layer,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
