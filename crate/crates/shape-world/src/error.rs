use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("unknown word {0:?}")]
    UnknownWord(String),
    #[error("unknown token id {0}")]
    UnknownTokenId(usize),
    #[error("malformed caption: {0}")]
    BadCaption(String),
    #[error("scene has no objects to describe")]
    EmptyScene,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("record: {0}")]
    Record(#[from] serde_json::Error),
}
