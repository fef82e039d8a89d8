use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the auction, training and experiment layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid auction size: {0}")]
    InvalidSize(String),

    #[error("unknown setting id `{0}` (expected one of A, B, C, D)")]
    UnknownSetting(String),

    #[error("unknown method `{0}`")]
    UnknownMethod(String),

    #[error("index out of range: {what} {index} (limit {limit})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid valuation profile: {0}")]
    InvalidProfile(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("instance too large for the exhaustive oracle: {allocations} allocations (cap {cap})")]
    OracleTooLarge { allocations: u128, cap: u128 },

    #[error("operation requires additive valuations")]
    NonAdditive,

    #[error("unsupported setting {setting} for {what}")]
    UnsupportedSetting { setting: String, what: &'static str },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
