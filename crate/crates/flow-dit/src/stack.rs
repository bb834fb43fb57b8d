//! The full text-to-image path: language model states, connector,
//! velocity field, and pixel decoder chained behind one interface.

use bridge::{assemble_condition, ConditionMode, Connector};
use micro_clip::{FeatureGrid, Provenance};
use micro_clip::nn::tensor_to_image;
use micro_mllm::MllmModel;
use recon_lab::ReconModel;
use shape_world::Image;
use tensor_core::{Scalar, Tensor};

use crate::error::DitResult;
use crate::flow::{sample, LatentStats};
use crate::model::DitModel;

/// Borrowed view over the four trained components plus the latent
/// statistics. Which language-model states condition the velocity
/// field is chosen by `mode`.
pub struct GenStack<'a, T: Scalar> {
    pub mllm: &'a MllmModel<T>,
    pub connector: &'a Connector<T>,
    pub dit: &'a DitModel<T>,
    pub recon: &'a ReconModel<T>,
    pub mode: ConditionMode,
    pub stats: &'a LatentStats,
}

impl<T: Scalar> GenStack<'_, T> {
    /// Run the language model over `[images; text; queries]` and push
    /// the selected states through the connector.
    pub fn condition_for(
        &self,
        images: &[&FeatureGrid<T>],
        text: &[usize],
    ) -> DitResult<Tensor<T>> {
        let seq = self.mllm.build_sequence(images, text, true)?;
        let states = self.mllm.forward_hidden(&seq)?;
        let (mm, queries) = self.mllm.extract_conditions(&seq, &states)?;
        let bundle = match self.mode {
            ConditionMode::QueryOnly => assemble_condition(None, Some(&queries), self.mode)?,
            ConditionMode::LastOnly => assemble_condition(Some(&mm), None, self.mode)?,
            ConditionMode::Dual => assemble_condition(Some(&mm), Some(&queries), self.mode)?,
        };
        Ok(self.connector.forward(&bundle)?)
    }

    fn decode_latent(&self, latent: &Tensor<T>) -> DitResult<Image> {
        let grid = FeatureGrid {
            tokens: self.stats.denormalize(latent)?,
            side: self.recon.encoder.cfg.grid_side(),
            provenance: Provenance::Student,
        };
        Ok(tensor_to_image(&self.recon.decode_grid(&grid)?))
    }

    /// Text to image: condition on the prompt alone, integrate the
    /// flow for `k` steps at guidance `w`, decode the latent grid.
    pub fn generate_image(
        &self,
        prompt: &[usize],
        k: usize,
        w: f64,
        seed: u64,
    ) -> DitResult<Image> {
        let cond = self.condition_for(&[], prompt)?;
        let tokens = self.recon.encoder.cfg.grid_tokens();
        let latent = sample(self.dit, &cond, tokens, k, w, seed)?;
        self.decode_latent(&latent)
    }

    /// Image plus instruction to image: the reference is encoded and
    /// prepended to the instruction, so its content reaches the flow
    /// through the language model states.
    pub fn edit_image(
        &self,
        reference: &Image,
        instruction: &[usize],
        k: usize,
        w: f64,
        seed: u64,
    ) -> DitResult<Image> {
        let ref_grid = self.recon.encoder.feature_grid(reference)?;
        let cond = self.condition_for(&[&ref_grid], instruction)?;
        let tokens = self.recon.encoder.cfg.grid_tokens();
        let latent = sample(self.dit, &cond, tokens, k, w, seed)?;
        self.decode_latent(&latent)
    }
}
