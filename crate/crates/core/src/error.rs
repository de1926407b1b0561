use thiserror::Error;

pub type Result<T> = std::result::Result<T, TleError>;

#[derive(Debug, Error)]
pub enum TleError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("video has {available} feature maps, {needed} required")]
    InsufficientMaps { needed: usize, available: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("function value is not finite at coordinate {coordinate}")]
    NonFiniteEvaluation { coordinate: usize },

    #[error("bad magic bytes {found:?} at offset 0")]
    MagicMismatch { found: [u8; 4] },

    #[error("unsupported format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },

    #[error("truncated input at byte offset {offset}: needed {needed} more bytes")]
    Truncated { offset: u64, needed: u64 },

    #[error("declared shape overflows at byte offset {offset}")]
    ShapeOverflow { offset: u64 },

    #[error("malformed file at byte offset {offset}: {message}")]
    Malformed { offset: u64, message: String },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TleError {
    pub(crate) fn shape(expected: impl std::fmt::Display, found: impl std::fmt::Display) -> Self {
        TleError::ShapeMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
