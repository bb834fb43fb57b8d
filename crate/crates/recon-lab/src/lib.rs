//! Two-stage image reconstruction on top of the contrastive encoder.
//!
//! A small MLP lifts the encoder's feature grid into a wider space and
//! a transformer decoder maps it back to pixels. Stage 1 trains only
//! that head against a frozen encoder; stage 2 finetunes the encoder
//! too, with a self-distillation penalty toward a frozen teacher
//! snapshot so the features stay useful for understanding. A frozen
//! random perceptual net supplies the blur-punishing distance term.

mod error;
mod model;
mod perceptual;
mod stages;

pub use error::{ReconError, ReconResult};
pub use model::{PixelDecoder, Projector, ReconConfig, ReconModel};
pub use perceptual::{lpips_like, PerceptualNet, PERCEPTUAL_DIM, STAGE_SCALES};
pub use stages::{
    feature_drift, recon_terms, stage1_loss, stage2_loss, LossBreakdown, Stage2LossCfg, StageLoss,
};
