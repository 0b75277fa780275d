use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {shapes:?}")]
    ShapeMismatch {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("backward requires a scalar output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),

    #[error("subspace basis is rank deficient (min pivot {0:e})")]
    RankDeficient(f64),

    #[error("clip proportion {v} rounds to zero saturated samples for length {n}")]
    ProportionTooSmall { v: f64, n: usize },

    #[error("SDR undefined for an all-zero reference signal")]
    ZeroReference,

    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },

    #[error("{path}: {reason}")]
    Audio { path: PathBuf, reason: String },

    #[error("unsupported container version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("bad container: {0}")]
    Format(String),

    #[error("checksum mismatch")]
    Checksum,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shapes(op: &'static str, shapes: &[&[usize]]) -> Self {
        Error::ShapeMismatch {
            op,
            shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        }
    }
}
