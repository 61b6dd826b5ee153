use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("feature norm {norm} exceeds declared bound {bound}")]
    NormBoundExceeded { norm: f64, bound: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("rejected record at seq {seq}: {reason}")]
    RejectedRecord { seq: u64, reason: String },

    #[error("singular design: information matrix has rank {rank} < {dim}")]
    SingularDesign { rank: usize, dim: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("undefined normalization: global lift f(N) is zero")]
    ZeroGlobalLift,

    #[error("propensity model must be trained on observational data only ({rct_records} RCT records seen)")]
    PropensityContaminated { rct_records: usize },

    #[error("empty class in classifier training: {0}")]
    EmptyClass(&'static str),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
