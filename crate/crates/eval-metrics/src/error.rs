use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("image dimensions differ: {0}x{0} vs {1}x{1}")]
    DimMismatch(usize, usize),
    #[error("image side {0} is smaller than the {1}-pixel window")]
    TooSmallForWindow(usize, usize),
    #[error("edit mask excludes every pixel")]
    MaskCoversAll,
    #[error("need at least {need} samples per set, got {got}")]
    TooFewSamples { need: usize, got: usize },
}
