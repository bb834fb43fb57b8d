use thiserror::Error;

use crate::condition::ConditionMode;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("{mode:?} mode requires {component}")]
    MissingComponent { mode: ConditionMode, component: &'static str },
    #[error("condition states must be a [len, dim] matrix, got shape {got:?}")]
    NotAMatrix { got: Vec<usize> },
    #[error("connector expects {expected}-dim condition states, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("mm states are {mm}-dim but query states are {queries}-dim")]
    DimMismatch { mm: usize, queries: usize },
    #[error(transparent)]
    Tensor(#[from] tensor_core::TensorError),
}

pub type BridgeResult<V> = Result<V, BridgeError>;
