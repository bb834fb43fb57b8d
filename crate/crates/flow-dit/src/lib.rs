//! Latent flow matching over encoder feature grids.
//!
//! A small diffusion-transformer velocity field learns to carry
//! Gaussian noise to normalized image latents along straight paths,
//! conditioned on language-model states through cross-attention. The
//! [`GenStack`] type chains the trained pieces into text-to-image
//! generation and instruction-based editing.

mod error;
mod flow;
mod model;
mod stack;

pub use error::{DitError, DitResult};
pub use flow::{fm_loss, sample, FlowBatch, LatentStats, STD_FLOOR};
pub use model::{timestep_features, DitBlock, DitConfig, DitModel};
pub use stack::GenStack;
