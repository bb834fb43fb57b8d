//! Caption tower: token embeddings, a couple of bidirectional blocks,
//! and mean pooling into the shared joint space.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tensor_core::{ParamSet, Scalar, Tensor};

use crate::encoder::{ClipConfig, NORM_EPS};
use crate::error::{ClipError, ClipResult};
use crate::nn::{Embedding, LayerNorm, Linear, TransformerBlock, INIT_STD};

pub struct TextEncoder<T: Scalar> {
    pub cfg: ClipConfig,
    pub params: ParamSet<T>,
    embed: Embedding<T>,
    pos: Tensor<T>,
    blocks: Vec<TransformerBlock<T>>,
    lnf: LayerNorm<T>,
    pool: Linear<T>,
}

impl<T: Scalar> TextEncoder<T> {
    pub fn init<R: Rng>(cfg: &ClipConfig, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let embed = Embedding::init(&mut params, "embed", cfg.vocab_size(), cfg.dim, rng);
        let pos = params.insert("pos", Tensor::randn(&[cfg.max_text_len, cfg.dim], INIT_STD, rng));
        let blocks = (0..cfg.text_blocks)
            .map(|i| TransformerBlock::init(&mut params, &format!("blk{i}"), cfg.dim, cfg.heads, rng))
            .collect();
        let lnf = LayerNorm::init(&mut params, "lnf", cfg.dim);
        let pool = Linear::init(&mut params, "pool", cfg.dim, cfg.joint_dim, rng);
        TextEncoder { cfg: cfg.clone(), params, embed, pos, blocks, lnf, pool }
    }

    /// Pooled unit-norm caption embedding, shape `[1, joint_dim]`.
    /// Captions are short and fully visible, so attention is
    /// unmasked (bidirectional).
    pub fn embed_text(&self, tokens: &[usize]) -> ClipResult<Tensor<T>> {
        if tokens.is_empty() {
            return Err(ClipError::EmptyCaption);
        }
        if tokens.len() > self.cfg.max_text_len {
            return Err(ClipError::CaptionTooLong { got: tokens.len(), max: self.cfg.max_text_len });
        }
        let mut x = self.embed.forward(tokens)?.add(&self.pos.narrow(0, 0, tokens.len())?)?;
        for block in &self.blocks {
            x = block.forward(&x, None)?;
        }
        let mean = self.lnf.forward(&x)?.mean_axis(0)?.reshape(&[1, self.cfg.dim])?;
        Ok(self.pool.forward(&mean)?.l2_normalize_last(NORM_EPS)?)
    }

    /// Snapshot with identical values and every parameter frozen.
    pub fn frozen_copy(&self) -> Self {
        let copy = TextEncoder::init(&self.cfg, &mut StdRng::seed_from_u64(0));
        copy.params.copy_from(&self.params).expect("same architecture");
        copy.params.set_trainable(false);
        copy
    }
}
