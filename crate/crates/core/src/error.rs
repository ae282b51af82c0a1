use alloc::string::String;

use crate::labeled_state::Label;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("numerical failure: {0}")]
    Numerical(&'static str),

    #[error("clutter density zero at measurement {index} of scan {scan}")]
    ZeroClutterDensity { scan: usize, index: usize },

    #[error("invalid state sequence: {0}")]
    InvalidSequence(String),

    #[error("label {0} not in window")]
    LabelNotInWindow(Label),

    #[error("invalid association history: {0}")]
    InvalidHistory(String),

    #[error("degenerate density: {0}")]
    Degenerate(&'static str),

    #[error("enumeration too large: {estimate:e} candidates exceeds guard {limit:e}")]
    EnumerationTooLarge { estimate: f64, limit: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            found,
        }
    }
}
