//! Small causal language model over multimodal token sequences.
//!
//! The sequence layout is fixed: projected image-feature tokens first,
//! then text tokens, then a bank of learnable query tokens. Attention
//! is strictly causal, so image tokens never see text, text never sees
//! queries, and the queries read the entire prefix.

use micro_clip::nn::{causal_mask, Embedding, LayerNorm, Linear, TransformerBlock};
use micro_clip::FeatureGrid;
use rand::Rng;
use serde::{Deserialize, Serialize};
use shape_world::WORDS;
use tensor_core::{ParamSet, Scalar, Tensor};

use crate::error::{MllmError, MllmResult};

/// Most reference images a sequence may carry.
pub const MAX_IMAGES: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MllmConfig {
    /// Dimension of incoming feature-grid tokens.
    pub feat_dim: usize,
    /// Model width.
    pub d_lm: usize,
    pub blocks: usize,
    pub heads: usize,
    /// Number of learnable query tokens appended after the text.
    pub n_queries: usize,
    /// Hard context limit; building a longer sequence errors.
    pub max_len: usize,
    /// When set, the LM head reuses the transposed word-embedding
    /// table instead of a separate output projection.
    pub tied_head: bool,
}

impl Default for MllmConfig {
    fn default() -> Self {
        MllmConfig {
            feat_dim: 64,
            d_lm: 128,
            blocks: 4,
            heads: 4,
            n_queries: 16,
            max_len: 256,
            tied_head: false,
        }
    }
}

impl MllmConfig {
    pub fn vocab_size(&self) -> usize {
        WORDS.len()
    }
}

/// Assembled input embeddings plus the segment boundaries that let
/// downstream consumers split hidden states back into parts.
pub struct MultimodalSequence<T: Scalar> {
    /// `[len, d_lm]` pre-position embeddings in layout order.
    pub embeds: Tensor<T>,
    /// Text token ids, kept for loss targets.
    pub text: Vec<usize>,
    img_end: usize,
    text_end: usize,
    n_queries: usize,
}

impl<T: Scalar> MultimodalSequence<T> {
    pub fn len(&self) -> usize {
        self.text_end + self.n_queries
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(start, image_end, text_end, len)`: image tokens occupy
    /// `start..image_end`, text `image_end..text_end`, queries the rest.
    pub fn boundaries(&self) -> (usize, usize, usize, usize) {
        (0, self.img_end, self.text_end, self.len())
    }

    pub fn img_end(&self) -> usize {
        self.img_end
    }

    pub fn text_end(&self) -> usize {
        self.text_end
    }

    pub fn has_queries(&self) -> bool {
        self.n_queries > 0
    }
}

/// The multimodal language model: feature adapter, word and position
/// embeddings, query bank, causal transformer stack, and LM head.
pub struct MllmModel<T: Scalar> {
    pub cfg: MllmConfig,
    pub params: ParamSet<T>,
    adapter: Linear<T>,
    embed: Embedding<T>,
    pos: Tensor<T>,
    queries: Tensor<T>,
    blocks: Vec<TransformerBlock<T>>,
    lnf: LayerNorm<T>,
    head: Option<Linear<T>>,
}

impl<T: Scalar> MllmModel<T> {
    pub fn init<R: Rng>(cfg: &MllmConfig, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let adapter = Linear::init(&mut params, "adapter", cfg.feat_dim, cfg.d_lm, rng);
        let embed = Embedding::init(&mut params, "embed", cfg.vocab_size(), cfg.d_lm, rng);
        let pos = params.insert(
            "pos",
            Tensor::randn(&[cfg.max_len, cfg.d_lm], micro_clip::nn::INIT_STD, rng),
        );
        let queries = params.insert(
            "queries",
            Tensor::randn(&[cfg.n_queries, cfg.d_lm], micro_clip::nn::INIT_STD, rng),
        );
        let blocks = (0..cfg.blocks)
            .map(|i| TransformerBlock::init(&mut params, &format!("blk{i}"), cfg.d_lm, cfg.heads, rng))
            .collect();
        let lnf = LayerNorm::init(&mut params, "lnf", cfg.d_lm);
        let head = (!cfg.tied_head)
            .then(|| Linear::init(&mut params, "head", cfg.d_lm, cfg.vocab_size(), rng));
        MllmModel { cfg: cfg.clone(), params, adapter, embed, pos, queries, blocks, lnf, head }
    }

    /// Lay out `[image tokens for each grid; text; queries]` and embed
    /// every segment into model width. Position embeddings are added
    /// later by [`MllmModel::forward_hidden`].
    pub fn build_sequence(
        &self,
        images: &[&FeatureGrid<T>],
        text: &[usize],
        use_queries: bool,
    ) -> MllmResult<MultimodalSequence<T>> {
        if images.len() > MAX_IMAGES {
            return Err(MllmError::TooManyImages(images.len()));
        }
        for grid in images {
            if grid.dim() != self.cfg.feat_dim {
                return Err(MllmError::FeatureDimMismatch {
                    expected: self.cfg.feat_dim,
                    got: grid.dim(),
                });
            }
        }
        let vocab = self.cfg.vocab_size();
        if let Some(&bad) = text.iter().find(|&&id| id >= vocab) {
            return Err(MllmError::BadTokenId(bad, vocab));
        }

        let img_end: usize = images.iter().map(|g| g.tokens.shape()[0]).sum();
        let text_end = img_end + text.len();
        let n_queries = if use_queries { self.cfg.n_queries } else { 0 };
        let len = text_end + n_queries;
        if len == 0 {
            return Err(MllmError::EmptySequence);
        }
        if len > self.cfg.max_len {
            return Err(MllmError::SequenceTooLong { got: len, max: self.cfg.max_len });
        }

        let mut parts: Vec<Tensor<T>> = Vec::new();
        for grid in images {
            parts.push(self.adapter.forward(&grid.tokens)?);
        }
        if !text.is_empty() {
            parts.push(self.embed.forward(text)?);
        }
        if use_queries {
            parts.push(self.queries.clone());
        }
        let embeds =
            if parts.len() == 1 { parts.pop().unwrap() } else { Tensor::concat(&parts, 0)? };
        Ok(MultimodalSequence { embeds, text: text.to_vec(), img_end, text_end, n_queries })
    }

    /// Last-layer hidden states, `[len, d_lm]`. Strictly causal:
    /// states at position i depend only on positions <= i.
    pub fn forward_hidden(&self, seq: &MultimodalSequence<T>) -> MllmResult<Tensor<T>> {
        let len = seq.len();
        let mask = causal_mask::<T>(len);
        let mut x = seq.embeds.add(&self.pos.narrow(0, 0, len)?)?;
        for blk in &self.blocks {
            x = blk.forward(&x, Some(&mask))?;
        }
        Ok(self.lnf.forward(&x)?)
    }

    /// Vocabulary logits for a block of hidden states.
    pub fn lm_logits(&self, states: &Tensor<T>) -> MllmResult<Tensor<T>> {
        match &self.head {
            Some(head) => Ok(head.forward(states)?),
            None => Ok(states.matmul(&self.embed.table.transpose(0, 1)?)?),
        }
    }

    /// Split hidden states into the two condition branches: states over
    /// the image and text segments, and states over the query segment.
    pub fn extract_conditions(
        &self,
        seq: &MultimodalSequence<T>,
        states: &Tensor<T>,
    ) -> MllmResult<(Tensor<T>, Tensor<T>)> {
        if !seq.has_queries() {
            return Err(MllmError::MissingQuerySegment);
        }
        let mm = states.narrow(0, 0, seq.text_end())?;
        let q = states.narrow(0, seq.text_end(), seq.n_queries)?;
        Ok((mm, q))
    }
}
