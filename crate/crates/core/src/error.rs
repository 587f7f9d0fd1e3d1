use thiserror::Error;

use crate::domain::MAX_DIM;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("unsupported dimension {0}, expected 1..={MAX_DIM}")]
    UnsupportedDimension(usize),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("region cap exceeded: {requested} regions requested, cap is {cap}")]
    RegionCapExceeded { requested: u128, cap: usize },

    #[error("non-finite integrand value {value} at {point:?}{}", region_suffix(*.region))]
    NonFiniteEvaluation {
        value: f64,
        point: Vec<f64>,
        region: Option<usize>,
    },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("coordinate {value} on axis {axis} lies outside [0, 1)")]
    OutsideUnitInterval { axis: usize, value: f64 },

    #[error("invalid region: {0}")]
    InvalidRegion(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown integrand `{0}`")]
    UnknownIntegrand(String),

    #[error("work group {group} failed: {source}")]
    Task { group: usize, source: Box<Error> },
}

fn region_suffix(region: Option<usize>) -> String {
    match region {
        Some(i) => format!(" in region {i}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Strips any `Task` wrappers added by the execution engine.
    pub fn root(&self) -> &Error {
        match self {
            Error::Task { source, .. } => source.root(),
            other => other,
        }
    }
}

/// Returns `Ok(value)` for finite values, otherwise a `NonFiniteEvaluation`
/// carrying the offending point.
#[inline]
pub(crate) fn check_finite(value: f64, point: &[f64]) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteEvaluation {
            value,
            point: point.to_vec(),
            region: None,
        })
    }
}
