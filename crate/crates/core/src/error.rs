// SPDX-License-Identifier: MIT OR Apache-2.0

use std::io;

/// Errors produced by the probing toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    /// Bad magic, unknown version or an unknown enum tag in a binary file.
    #[error("format error: {0}")]
    Format(String),

    /// Payload ended early or carried trailing bytes.
    #[error("corrupt file: {0}")]
    Corruption(String),

    /// Well-formed file whose contents violate an invariant (e.g. NaN entries).
    #[error("validation error: {0}")]
    Validation(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    /// A class is missing where both are required.
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unsupported probe variant: {0}")]
    UnsupportedVariant(String),

    #[error("relative risk undefined: {0}")]
    UndefinedRelativeRisk(String),

    #[error("cross-validation fold error: {0}")]
    Fold(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dims(expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
