use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{0} overflows binary16 (max 65504)")]
    Binary16Overflow(f32),

    #[error("unsupported bit width {0} (expected 2, 3, 4 or 8)")]
    UnsupportedBits(u32),

    #[error("code {code} out of range for {bits}-bit field")]
    CodeOutOfRange { code: i32, bits: u8 },

    #[error("packed length mismatch: expected {expected} bytes for {count} codes, got {actual}")]
    PackedLength {
        expected: usize,
        actual: usize,
        count: usize,
    },

    #[error("cannot fit a log scale to an all-zero column")]
    ZeroColumn,

    #[error("bad magic: expected MQE1")]
    BadMagic,

    #[error("unsupported container version {found} (this build reads {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("truncated data in {0}")]
    Truncated(String),

    #[error("inconsistent index entry for {tensor}: {reason}")]
    IndexInconsistent { tensor: String, reason: String },

    #[error("malformed index line {line}: {reason}")]
    MalformedIndex { line: usize, reason: String },

    #[error("invalid name {0:?}: names must be non-empty and free of tabs and newlines")]
    InvalidName(String),

    #[error("duplicate tensor name {0}")]
    DuplicateName(String),

    #[error("missing tensor {0}")]
    MissingTensor(String),

    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("expert bank mixes float and quantized weights in {0}")]
    MixedPrecisionBank(String),

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("invalid quantization plan: {0}")]
    InvalidPlan(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
