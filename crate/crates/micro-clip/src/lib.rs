//! Contrastive image/text encoder pair at desk scale.
//!
//! A four-block patch transformer encodes 32x32 scenes into an 8x8
//! grid of 64-dim features plus a pooled joint-space embedding; a
//! two-block text tower embeds captions into the same space. The two
//! are trained with a symmetric InfoNCE objective under a learnable
//! temperature. Downstream crates consume the feature grids (for
//! reconstruction and conditioning) and the retrieval score (as the
//! understanding-retention gauge), so this crate also re-exports the
//! parameterized layers the rest of the model zoo is built from.

mod encoder;
mod error;
mod loss;
pub mod nn;
mod text;

pub use encoder::{
    ClipConfig, FeatureGrid, ImageEncoder, Provenance, NORM_EPS, TAU_INIT,
};
pub use error::{ClipError, ClipResult};
pub use loss::{
    infonce_from_embeddings, retrieval_at_1, retrieval_eval, similarity_logits, ClipModel,
};
pub use text::TextEncoder;
