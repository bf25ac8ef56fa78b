//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by tensor math, codecs, and the federation harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),

    #[error("version mismatch: got {got}, expected {expected}")]
    VersionMismatch { got: u8, expected: u8 },

    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("mode mismatch: {0}")]
    ModeMismatch(String),

    #[error("duplicate client id {0}")]
    DuplicateClient(u16),

    #[error("unknown client id {0}")]
    UnknownClient(u16),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
