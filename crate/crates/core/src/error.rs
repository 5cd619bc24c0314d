use thiserror::Error;

pub type Result<T, E = DdclError> = std::result::Result<T, E>;

/// Failures while decoding a prefix-coded bit string.
#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("integer {0} outside the supported range ±(2^31 - 1)")]
    Overflow(i64),
    #[error("truncated codeword starting at bit {offset}")]
    Truncated { offset: usize },
    #[error("codeword at bit {offset} encodes a value beyond 32 bits")]
    InvalidCodeword { offset: usize },
}

/// Failures while parsing a wire frame. Each maps to a distinct error code.
#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("bad magic byte {0:#04x}")]
    MagicMismatch(u8),
    #[error("unsupported frame version {0}")]
    VersionMismatch(u8),
    #[error("frame truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("nonzero padding bits in final payload byte")]
    NonZeroPadding,
    #[error("payload does not decode to {dims} integers in {bits} bits: {reason}")]
    PayloadMismatch {
        dims: u16,
        bits: u32,
        reason: String,
    },
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
    #[error("message has {0} dims; frames carry at most 65535")]
    DimOverflow(usize),
    #[error("payload of {0} bits does not fit the length field")]
    PayloadOverflow(usize),
}

impl FrameError {
    /// Stable numeric code, used by the CLI and cross-language tests.
    pub fn code(&self) -> u8 {
        match self {
            FrameError::MagicMismatch(_) => 1,
            FrameError::VersionMismatch(_) => 2,
            FrameError::Truncated { .. } => 3,
            FrameError::NonZeroPadding => 4,
            FrameError::PayloadMismatch { .. } => 5,
            FrameError::TrailingBytes(_) => 6,
            FrameError::DimOverflow(_) => 7,
            FrameError::PayloadOverflow(_) => 8,
        }
    }
}

#[derive(Debug, Error)]
pub enum DdclError {
    #[error("quantization width must be finite and positive, got {0}")]
    InvalidDelta(f64),
    #[error("non-finite signal value {value} at dim {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("message magnitude out of range at dim {index} (z = {value})")]
    SignalOverflow { index: usize, value: f64 },
    #[error("expected {expected} values, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("empty tensor")]
    EmptyTensor,
    #[error("unsupported bit width {0}; expected 4, 8 or 16")]
    UnsupportedBitWidth(u32),
    #[error("episode already finished")]
    EpisodeDone,
    #[error("invalid goal distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at episode {episode}: {detail}")]
    Diverged { episode: usize, detail: String },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
