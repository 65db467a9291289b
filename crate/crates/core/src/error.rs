use thiserror::Error;

/// Errors raised by the counter codec and the sketches built on it.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("position {pos} out of range for length {len}")]
    OutOfRange { pos: u64, len: u64 },

    #[error("select({m}) needs at least {} set bits, span has {ones}", m + 1)]
    NotFound { m: u64, ones: u64 },

    #[error("invalid base-3 digit {0}")]
    InvalidDigit(u8),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("counter {index} would become negative")]
    Underflow { index: u64 },

    #[error("counter {index} exceeds the 32-bit tails range")]
    CounterOverflow { index: u64 },

    #[error("value {value} at index {index} cannot be encoded")]
    ValueOutOfRange { index: u64, value: i64 },

    #[error("update delta must be +1 or -1, got {0}")]
    InvalidDelta(i64),

    #[error("capacity exhausted: {0}")]
    Capacity(String),

    #[error("integrity violation: {0}")]
    Integrity(String),

    #[error("malformed serialized data: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
