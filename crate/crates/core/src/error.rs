use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("overflow: {0}")]
    Overflow(String),
    #[error("invalid distribution: {0}")]
    Distribution(String),
    #[error("invalid codebook: {0}")]
    Codebook(String),
    #[error("invalid model: {0}")]
    Model(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("zero probability: {0}")]
    ZeroMass(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
