use thiserror::Error;

/// Errors produced at the library's fallible boundaries (file I/O, user
/// configuration, statistics preconditions).
///
/// Hot distance kernels treat operand mismatches as programming errors and
/// panic instead; callers are expected to validate dimensions once, at the
/// edge, not per comparison.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("cannot normalise zero vector")]
    ZeroVector,

    #[error("parse error at offset {offset}: {reason}")]
    Parse { offset: u64, reason: String },

    #[error("corrupt code data: {0}")]
    Corrupt(String),

    #[error("requested {requested} pairs but only {available} distinct pairs exist")]
    InsufficientPairs { requested: usize, available: usize },

    #[error("degenerate ranks: zero rank variance")]
    DegenerateRanks,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("insufficient entries: need {needed}, have {have}")]
    InsufficientEntries { needed: usize, have: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
