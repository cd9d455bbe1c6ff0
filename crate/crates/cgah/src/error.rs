//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by data handling, training, and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("no users or items survive the degree filter (min_count = {0})")]
    EmptyAfterFilter(usize),

    #[error("user {0} has a single rating; run the degree filter before splitting")]
    NeedsFilter(u32),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("internal consistency check failed: {0}")]
    InternalConsistency(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("bad model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
