use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("requested {requested} neighbours but the tree holds {available} entries")]
    TooFewEntries { requested: usize, available: usize },

    #[error("k = {k} exceeds the half bucket size b = {b}")]
    KExceedsBucket { k: usize, b: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("covariance is singular: {0}")]
    SingularCovariance(String),

    #[error("ODE integration failed: {0}")]
    Integration(String),

    #[error("state outside the hazard domain: {0}")]
    InvalidState(String),

    #[error("current state and proposal both have zero density")]
    OutsideSupport,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short stable name, used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::DimensionMismatch { .. } => "dimension_mismatch",
            Self::InvalidParameter(_) => "invalid_parameter",
            Self::TooFewEntries { .. } => "too_few_entries",
            Self::KExceedsBucket { .. } => "k_exceeds_bucket",
            Self::NonFinite(_) => "non_finite",
            Self::SingularCovariance(_) => "singular_covariance",
            Self::Integration(_) => "integration",
            Self::InvalidState(_) => "invalid_state",
            Self::OutsideSupport => "outside_support",
            Self::Parse(_) => "parse",
            Self::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
