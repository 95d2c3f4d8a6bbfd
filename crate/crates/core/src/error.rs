use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: expected {expected}, found {found}")]
    GridMismatch { expected: String, found: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("functional `{0}` has no Malliavin derivative density")]
    NoDensity(String),

    #[error("rank-deficient regression design at step {step}")]
    RankDeficient { step: usize },

    #[error("degenerate estimate: {0}")]
    Degenerate(String),

    #[error("unknown catalog entry `{0}`")]
    UnknownCatalog(String),

    #[error("policy cannot be serialized: {0}")]
    NotSerializable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
