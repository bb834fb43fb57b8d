//! A small multimodal causal language model.
//!
//! Projected image-feature tokens, caption text, and a bank of
//! learnable queries share one causally-masked transformer. Training
//! is next-token caption prediction; afterwards the model is frozen
//! and its last-layer states serve as conditioning signals: the states
//! over the image and text segments on one branch, the states over the
//! query segment on the other.

mod error;
mod loss;
mod model;

pub use error::{MllmError, MllmResult};
pub use loss::perplexity;
pub use model::{MllmConfig, MllmModel, MultimodalSequence, MAX_IMAGES};
