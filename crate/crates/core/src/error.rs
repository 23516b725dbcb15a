use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("no trainable users")]
    NoTrainableUsers,

    #[error("sequence too short to split (length {0})")]
    TooShort(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("target must not be the padding item")]
    PaddingTarget,

    #[error("no valid negative item available")]
    NoNegative,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("diverged: {0}")]
    Diverged(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
