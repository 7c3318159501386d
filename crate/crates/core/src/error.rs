use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank { op: &'static str, expected: usize, shape: Vec<usize> },

    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },

    #[error("label {label} out of range for {classes} classes (row {row})")]
    LabelOutOfRange { label: usize, classes: usize, row: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite {what} at {at}")]
    NonFinite { what: &'static str, at: String },
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid { op, msg: msg.into() }
    }
}
