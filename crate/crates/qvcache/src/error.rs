use thiserror::Error;

/// Errors surfaced by cache, backend, and file operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("vector component at position {position} is not finite")]
    NonFinite { position: usize },

    #[error("cosine distance is undefined for a zero vector")]
    ZeroVectorCosine,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("result list is not sorted ascending by distance")]
    UnsortedResult,

    #[error("result list contains duplicate id {0}")]
    DuplicateId(u64),

    #[error("k = {k} exceeds available vectors ({available})")]
    KTooLarge { k: usize, available: usize },

    #[error("unknown vector id {0}")]
    UnknownId(u64),

    #[error("need at least {needed} distances, got {got}")]
    TooFewDistances { needed: usize, got: usize },

    #[error("{path}: format error at byte {offset}: {message}")]
    Format {
        path: String,
        offset: u64,
        message: String,
    },

    #[error("sample of {got} vectors is too small (need at least {needed})")]
    SampleTooSmall { needed: usize, got: usize },

    #[error("sample is degenerate: no variance in any direction")]
    DegenerateSample,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("region key space n_buckets^d_reduced exceeds 128 bits")]
    KeySpaceOverflow,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
