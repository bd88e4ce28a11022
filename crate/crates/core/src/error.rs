use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid token: {0}")]
    InvalidToken(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("length mismatch: {what} (expected {expected}, got {actual})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for {what} of size {size}")]
    IndexOutOfRange {
        what: String,
        index: usize,
        size: usize,
    },

    #[error("invalid tag {tag:?}: {reason}")]
    InvalidTag { tag: String, reason: String },

    #[error("overlapping or unsorted spans at {0}")]
    SpanOverlap(String),

    #[error("invalid network specification: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unknown word {0:?}")]
    UnknownWord(String),

    #[error("non-finite gradient in {0}")]
    NonFinite(String),

    #[error("not a model file (bad magic)")]
    BadMagic,

    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated model file")]
    Truncated,

    #[error("malformed model file: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
