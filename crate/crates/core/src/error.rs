use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A single broken invariant found by [`crate::types::Validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DimensionMismatch { what: String, expected: usize, found: usize },
    NonFinite { plane: usize, row: usize, col: usize, value: f64 },
    Unsorted { what: String, index: usize },
    Negative { what: String, index: usize, value: f64 },
    Unnormalized { measurement: usize, channel: usize, sum: f64 },
    OutOfRange { what: String, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DimensionMismatch { what, expected, found } => {
                write!(f, "{what}: expected {expected}, found {found}")
            }
            Violation::NonFinite { plane, row, col, value } => write!(
                f,
                "non-finite value {value} at channel {plane}, pixel ({row}, {col})"
            ),
            Violation::Unsorted { what, index } => {
                write!(f, "{what} not strictly increasing at index {index}")
            }
            Violation::Negative { what, index, value } => {
                write!(f, "{what} has negative entry {value} at index {index}")
            }
            Violation::Unnormalized { measurement, channel, sum } => write!(
                f,
                "kernel ({measurement}, {channel}) sums to {sum}, expected 1"
            ),
            Violation::OutOfRange { what, value } => write!(f, "{what} out of range: {value}"),
        }
    }
}

/// All violations found in one container.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub container: &'static str,
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid {}:", self.container)?;
        for v in &self.violations {
            write!(f, " {v};")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Validation(ValidationReport),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("wavelength {wavelength_nm} nm outside table range [{min_nm}, {max_nm}]")]
    OutOfCoverage {
        wavelength_nm: f64,
        min_nm: f64,
        max_nm: f64,
    },
    #[error("optics: {0}")]
    Optics(String),
    #[error("basis: {0}")]
    Basis(String),
    #[error("solver aborted at iteration {iteration}: {reason}")]
    SolverAbort { iteration: usize, reason: String },
    #[error("format: {0}")]
    Format(String),
    #[error("truncated input at byte offset {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// True for failures of the numerical procedure itself, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::SolverAbort { .. })
    }
}
