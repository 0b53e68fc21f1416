//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SentinelError {
    #[error("missing column: {0}")]
    MissingColumn(String),

    #[error("line {line}: {message}")]
    BadRow { line: u64, message: String },

    #[error("missing class: need at least one record per class")]
    MissingClass,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("model file version {found} is not supported (current {current})")]
    VersionMismatch { found: u32, current: u32 },

    #[error("model parse error: {0}")]
    ModelParse(String),

    #[error("insufficient perturbations: {0} < 50")]
    InsufficientPerturbations(usize),

    #[error("too many players for exact enumeration: {0} > 20")]
    TooManyPlayers(usize),

    #[error("authentication failed: {0}")]
    Auth(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("response parse error: {message}; body excerpt: {excerpt}")]
    ResponseParse { message: String, excerpt: String },

    #[error("replay miss: no recorded response for request hash {0}")]
    ReplayMiss(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("schema validation failed: {0}")]
    SchemaValidation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SentinelError>;
