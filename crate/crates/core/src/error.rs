use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape or dimension mismatch between tensors, models and targets.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Invalid configuration values (non-positive sizes, bad ranges, missing files).
    #[error("configuration error: {0}")]
    Config(String),

    /// A numeric quantity became non-finite where that is fatal.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Misuse of an API (e.g. backward from a non-scalar node).
    #[error("usage error: {0}")]
    Usage(String),

    /// Data ingestion failure, carrying the offending row where known.
    #[error("ingestion error at row {row}: {message}")]
    Ingestion { row: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed checkpoint or dump file.
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
