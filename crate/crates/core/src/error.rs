use thiserror::Error;

use crate::mx::MxPrecision;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MxError {
    #[error("non-finite value {value} at block index {index}")]
    NonFinite { index: usize, value: f32 },
    #[error("non-finite value {value} at ({row}, {col})")]
    NonFiniteAt { row: usize, col: usize, value: f32 },
    #[error("precision mismatch: {left} vs {right}")]
    PrecisionMismatch { left: MxPrecision, right: MxPrecision },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Errors from parsing the binary file formats (matrices, MX tensors,
/// weight checkpoints).
#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic, expected {expected}")]
    BadMagic { expected: &'static str },
    #[error("file truncated while reading {what} at byte {offset}")]
    Truncated { what: &'static str, offset: usize },
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("invalid content: {0}")]
    Invalid(String),
}
