//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by construction, validation and I/O paths.
///
/// Numerical diagnostics never error on statistical failures; those are
/// reported through [`crate::diagnostics::StudyReport`] verdicts instead.
#[derive(Debug, Error)]
pub enum SmeError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid box: lower[{index}] = {lower} must be < upper[{index}] = {upper}")]
    InvalidBox {
        index: usize,
        lower: f64,
        upper: f64,
    },

    #[error("non-finite value {value} at coordinate {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("point outside {space}: coordinate {index} = {value} not in [{lower}, {upper}]")]
    OutOfBounds {
        space: &'static str,
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("grid of {requested} points exceeds cap of {cap}")]
    GridTooLarge { requested: u128, cap: usize },

    #[error("invalid shock spec: {0}")]
    InvalidShock(String),

    #[error("kappa must be nonnegative, got {0}")]
    NegativeKappa(f64),

    #[error("{what} must be >= 1, got {got}")]
    EmptyWindow { what: &'static str, got: i64 },

    #[error("invalid moment spec: {0}")]
    InvalidMomentSpec(String),

    #[error("invalid estimation setup: {0}")]
    InvalidEstimation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("unknown study id '{0}'; valid ids: {1}")]
    UnknownStudy(String, &'static str),

    #[error("unknown model id '{0}'; valid ids: {1}")]
    UnknownModel(String, &'static str),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, SmeError>;

impl SmeError {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        SmeError::Io {
            path: path.into(),
            source,
        }
    }
}
