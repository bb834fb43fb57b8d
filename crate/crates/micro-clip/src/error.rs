use tensor_core::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClipError {
    #[error("expected a {expected}x{expected} rgb image, got shape {got:?}")]
    BadImage { expected: usize, got: Vec<usize> },
    #[error("caption is empty")]
    EmptyCaption,
    #[error("caption has {got} tokens, maximum is {max}")]
    CaptionTooLong { got: usize, max: usize },
    #[error("contrastive batch needs at least 2 pairs, got {0}")]
    BatchTooSmall(usize),
    #[error("captions {0} and {1} in the batch are identical")]
    DuplicateCaption(usize, usize),
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type ClipResult<V> = Result<V, ClipError>;
