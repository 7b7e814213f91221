//! Error type shared by every module.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum RprError {
    /// Cloud violates a precondition (non-finite coordinates, too few points).
    InvalidCloud(String),
    /// Argument outside its documented domain.
    InvalidArgument(String),
    /// Tensor shapes incompatible for an op; carries both shapes.
    ShapeError {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// On-disk data malformed; `offset` is the byte position where parsing failed.
    FormatError { msg: String, offset: u64 },
    /// Non-finite value where finite arithmetic was required.
    NumericalError(String),
    /// A training batch yielded no valid triplet.
    EmptyBatch,
    /// Query against a database with no entries.
    EmptyDatabase,
    /// Underlying I/O failure.
    Io(String),
}

impl fmt::Display for RprError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RprError::InvalidCloud(msg) => write!(f, "invalid cloud: {msg}"),
            RprError::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            RprError::ShapeError { op, left, right } => {
                write!(f, "shape mismatch in {op}: {left:?} vs {right:?}")
            }
            RprError::FormatError { msg, offset } => {
                write!(f, "format error at byte {offset}: {msg}")
            }
            RprError::NumericalError(msg) => write!(f, "numerical error: {msg}"),
            RprError::EmptyBatch => write!(f, "batch contains no valid triplet"),
            RprError::EmptyDatabase => write!(f, "database is empty"),
            RprError::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for RprError {}

impl From<std::io::Error> for RprError {
    fn from(e: std::io::Error) -> Self {
        RprError::Io(e.to_string())
    }
}
