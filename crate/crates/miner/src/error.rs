//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MinerError {
    #[error("dimension {dim} is not divisible by {divisor}")]
    NonDivisibleDims { dim: usize, divisor: usize },
    #[error("operation requires a {expected:?} pyramid, got {got:?}")]
    WrongKind {
        expected: crate::pyramid::PyramidKind,
        got: crate::pyramid::PyramidKind,
    },
    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: {a:?} vs {b:?}")]
    DimMismatch { a: Vec<usize>, b: Vec<usize> },
    #[error("backward called without a matching forward pass")]
    StaleActivations,
    #[error("scale {scale} out of range (model has {num_scales} scales)")]
    ScaleOutOfRange { scale: usize, num_scales: usize },
    #[error("coordinate {coord:?} outside the finest grid {dims:?}")]
    OutOfDomain { coord: Vec<usize>, dims: Vec<usize> },
    #[error("operation defined only for {expected:?} signals")]
    WrongDomain { expected: crate::pyramid::DomainKind },
    #[error("bad magic bytes (expected \"MINR\")")]
    BadMagic,
    #[error("unsupported model file version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated model file")]
    TruncatedFile,
    #[error("checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("non-finite sample in signal")]
    NonFiniteSample,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MinerError>;
