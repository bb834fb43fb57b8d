//! The connector: a small bidirectional transformer that turns
//! language-model condition states into generator conditioning tokens.

use micro_clip::nn::{Linear, TransformerBlock};
use rand::Rng;
use serde::{Deserialize, Serialize};
use tensor_core::{ParamSet, Scalar, Tensor};

use crate::condition::ConditionBundle;
use crate::error::{BridgeError, BridgeResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectorConfig {
    /// Width of incoming condition states.
    pub d_lm: usize,
    /// Width of the conditioning tokens handed to the generator.
    pub d_cond: usize,
    pub blocks: usize,
    pub heads: usize,
}

impl Default for ConnectorConfig {
    fn default() -> Self {
        ConnectorConfig { d_lm: 128, d_cond: 128, blocks: 2, heads: 4 }
    }
}

/// Length-preserving map `[l_cond, d_lm] -> [l_cond, d_cond]`:
/// transformer blocks with unmasked self-attention, then a projection.
pub struct Connector<T: Scalar> {
    pub cfg: ConnectorConfig,
    pub params: ParamSet<T>,
    blocks: Vec<TransformerBlock<T>>,
    proj: Linear<T>,
}

impl<T: Scalar> Connector<T> {
    pub fn init<R: Rng>(cfg: &ConnectorConfig, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let blocks = (0..cfg.blocks)
            .map(|i| TransformerBlock::init(&mut params, &format!("blk{i}"), cfg.d_lm, cfg.heads, rng))
            .collect();
        let proj = Linear::init(&mut params, "proj", cfg.d_lm, cfg.d_cond, rng);
        Connector { cfg: cfg.clone(), params, blocks, proj }
    }

    pub fn forward(&self, bundle: &ConditionBundle<T>) -> BridgeResult<Tensor<T>> {
        self.forward_with_mask(bundle, None)
    }

    /// Forward with an optional `[l_cond, l_cond]` additive attention
    /// mask, used to study how much each segment of a condition
    /// contributes (restricting attention to a segment reproduces the
    /// shorter condition exactly at those positions).
    pub fn forward_with_mask(
        &self,
        bundle: &ConditionBundle<T>,
        mask: Option<&Tensor<T>>,
    ) -> BridgeResult<Tensor<T>> {
        if bundle.dim() != self.cfg.d_lm {
            return Err(BridgeError::WidthMismatch { expected: self.cfg.d_lm, got: bundle.dim() });
        }
        let mut x = bundle.assembled.clone();
        for blk in &self.blocks {
            x = blk.forward(&x, mask)?;
        }
        Ok(self.proj.forward(&x)?)
    }
}
