use std::io;

use thiserror::Error;

/// Failure modes of the grid and checkpoint file readers. Each maps to a
/// distinct numeric code so callers (and the CLI) can tell them apart.
#[derive(Error, Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unsupported dtype {0}")]
    BadDtype(u8),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("malformed header")]
    BadHeader,
}

impl FormatError {
    pub fn code(&self) -> u32 {
        match self {
            FormatError::BadMagic => 1,
            FormatError::BadVersion(_) => 2,
            FormatError::BadDtype(_) => 3,
            FormatError::Truncated { .. } => 4,
            FormatError::BadHeader => 5,
        }
    }
}

#[derive(Error, Debug)]
pub enum SscError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("format error: {0}")]
    Format(#[from] FormatError),

    #[error("missing parameter `{0}`")]
    MissingParameter(String),

    #[error("no voxels left to score: {0}")]
    EmptySelection(String),

    #[error("training diverged at epoch {epoch}, step {step}: {what}")]
    Diverged { epoch: usize, step: usize, what: String },

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = SscError> = std::result::Result<T, E>;

pub(crate) fn shape_err(msg: impl Into<String>) -> SscError {
    SscError::Shape(msg.into())
}
