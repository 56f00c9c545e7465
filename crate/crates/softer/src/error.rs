//! Crate-wide error type with one variant per failure class, so the CLI can
//! map classes to distinct exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SofterError {
    /// Tensor or dataset shapes are inconsistent (dims, lengths, index range).
    #[error("shape error: {0}")]
    Shape(String),

    /// A parameter value violates its admissible range.
    #[error("invalid parameter: {0}")]
    Invalid(String),

    /// Non-finite numbers where finite ones are required.
    #[error("non-finite data: {0}")]
    NonFinite(String),

    /// Symmetry was requested but the input is not symmetric.
    #[error("asymmetric input: {0}")]
    Asymmetric(String),

    /// A numeric routine failed (Cholesky breakdown, non-finite density).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Malformed file contents (bad magic, truncated payload, parse failure).
    #[error("format error: {0}")]
    Format(String),

    /// Persisted artifact was produced by an incompatible version.
    #[error("version mismatch: {0}")]
    VersionMismatch(String),

    /// Stored checksum does not match the data on disk.
    #[error("checksum mismatch: {0}")]
    ChecksumMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SofterError>;

impl SofterError {
    /// Process exit code for this error class. 2 is reserved for usage errors
    /// (emitted by the argument parser), 0 for success.
    pub fn exit_code(&self) -> i32 {
        match self {
            SofterError::Shape(_)
            | SofterError::Invalid(_)
            | SofterError::NonFinite(_)
            | SofterError::Asymmetric(_) => 3,
            SofterError::Numeric(_) => 4,
            SofterError::Io(_) | SofterError::Json(_) | SofterError::Format(_) => 5,
            SofterError::VersionMismatch(_) | SofterError::ChecksumMismatch(_) => 6,
        }
    }
}
