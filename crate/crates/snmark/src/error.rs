//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at layer {layer}: {message}")]
    ShapeMismatch { layer: usize, message: String },

    #[error("non-finite gradient in layer {layer} ({which})")]
    NonFiniteGradient { layer: usize, which: &'static str },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("serial-number task did not converge: {matched}/{total} digits correct after epoch budget")]
    SnNotConverged { matched: usize, total: usize },

    #[error("accuracy collapsed to {accuracy:.2}% during pruning fine-tune (sparsity {sparsity:.2})")]
    AccuracyCollapse { accuracy: f64, sparsity: f64 },

    #[error("key generation failed: {0}")]
    KeyGeneration(String),

    #[error("token value out of range: token must be positive and below the modulus")]
    TokenOutOfRange,

    #[error("modulus too small to hold a structured token (need at least 48 bits)")]
    ModulusTooSmall,

    #[error("serial number already registered: {0}")]
    DuplicateSerial(String),

    #[error("corrupt registry record at line {line}: {message}")]
    CorruptRegistry { line: usize, message: String },

    #[error("invalid serial number text: {0}")]
    InvalidSerialText(String),

    #[error("bad IDX magic: found {found:#010x}, expected {expected:#010x}")]
    IdxBadMagic { found: u32, expected: u32 },

    #[error("truncated IDX file: expected {expected} bytes of payload, found {found}")]
    IdxTruncated { expected: usize, found: usize },

    #[error("IDX count mismatch: {images} images vs {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("checkpoint is not in a recognized format")]
    CheckpointBadMagic,

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("http error {status}: {message}")]
    Http { status: u16, message: String },

    #[error("transport failure talking to {endpoint}: {message}")]
    Transport { endpoint: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
