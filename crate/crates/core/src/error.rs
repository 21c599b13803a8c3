/// Failure to encode or decode a wire frame. Offsets count from the first
/// byte of the frame, length prefix included.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("unsupported version 0x{found:02x} at offset {offset}")]
    UnsupportedVersion { found: u8, offset: usize },
    #[error("unknown kind 0x{found:02x} at offset {offset}")]
    UnknownKind { found: u8, offset: usize },
    #[error("truncated field at offset {offset}")]
    Truncated { offset: usize },
    #[error("length prefix says {declared} bytes but body has {actual}")]
    LengthMismatch { declared: u64, actual: u64 },
    #[error("trailing bytes at offset {offset}")]
    TrailingBytes { offset: usize },
    #[error("invalid utf-8 at offset {offset}")]
    InvalidUtf8 { offset: usize },
    #[error("invalid {what} at offset {offset}")]
    InvalidValue { offset: usize, what: String },
    #[error("frame body of {len} bytes does not fit a 32-bit length prefix")]
    TooLarge { len: u64 },
    #[error("encoded reference is {len} bytes, limit is {limit}")]
    ReferenceTooLarge { len: usize, limit: usize },
}

impl CodecError {
    /// Frame offset the error refers to, when there is one.
    pub fn offset(&self) -> Option<usize> {
        match self {
            CodecError::UnsupportedVersion { offset, .. }
            | CodecError::UnknownKind { offset, .. }
            | CodecError::Truncated { offset }
            | CodecError::TrailingBytes { offset }
            | CodecError::InvalidUtf8 { offset }
            | CodecError::InvalidValue { offset, .. } => Some(*offset),
            _ => None,
        }
    }
}
