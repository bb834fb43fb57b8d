use thiserror::Error;

#[derive(Debug, Error)]
pub enum DitError {
    #[error("flow time {0} lies outside the open interval (0, 1)")]
    BadTime(f64),
    #[error("interpolation time {0} lies outside [0, 1]")]
    BadInterpolant(f64),
    #[error("sampler needs at least one integration step")]
    NoSteps,
    #[error("expected shape {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("sampler state became non-finite at integration step {step}")]
    NonFiniteState { step: usize },
    #[error("latent statistics need at least one grid")]
    EmptyStats,
    #[error("latent statistics are {expected}-dim, grid tokens are {got}-dim")]
    StatsDimMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Bridge(#[from] bridge::BridgeError),
    #[error(transparent)]
    Clip(#[from] micro_clip::ClipError),
    #[error(transparent)]
    Mllm(#[from] micro_mllm::MllmError),
    #[error(transparent)]
    Recon(#[from] recon_lab::ReconError),
    #[error(transparent)]
    Tensor(#[from] tensor_core::TensorError),
}

pub type DitResult<V> = Result<V, DitError>;
