use thiserror::Error;

#[derive(Debug, Error)]
pub enum MllmError {
    #[error("sequence of {got} tokens exceeds the {max}-token context")]
    SequenceTooLong { got: usize, max: usize },
    #[error("{0} reference images given, at most {max} supported", max = crate::MAX_IMAGES)]
    TooManyImages(usize),
    #[error("sequence has no tokens")]
    EmptySequence,
    #[error("caption must be non-empty")]
    EmptyCaption,
    #[error("caption of {0} token(s) has no next-token targets, need at least 2")]
    CaptionTooShort(usize),
    #[error("token id {0} outside the {1}-word vocabulary")]
    BadTokenId(usize, usize),
    #[error("feature grid carries {got}-dim tokens, adapter expects {expected}")]
    FeatureDimMismatch { expected: usize, got: usize },
    #[error("sequence was built without a query segment")]
    MissingQuerySegment,
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error(transparent)]
    Tensor(#[from] tensor_core::TensorError),
}

pub type MllmResult<V> = Result<V, MllmError>;
