use micro_clip::ClipError;
use tensor_core::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReconError {
    #[error("encoder must be frozen for stage-1 training, but {0:?} is trainable")]
    EncoderNotFrozen(String),
    #[error("teacher parameter {0:?} is trainable; teachers must stay frozen")]
    TeacherNotFrozen(String),
    #[error("teacher grid {teacher:?} does not match student grid {student:?}")]
    GridMismatch { teacher: Vec<usize>, student: Vec<usize> },
    #[error("encoders have different configurations")]
    ArchMismatch,
    #[error("self-distillation weight must be nonnegative, got {0}")]
    BadLambda(f64),
    #[error("images have different sizes: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error(transparent)]
    Clip(#[from] ClipError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type ReconResult<V> = Result<V, ReconError>;
