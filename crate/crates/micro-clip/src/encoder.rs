//! Patch-transformer image encoder with a contrastive pooling head.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use shape_world::{Image, WORDS};
use tensor_core::{patchify, ParamSet, Scalar, Tensor};

use crate::error::{ClipError, ClipResult};
use crate::nn::{image_to_tensor, LayerNorm, Linear, TransformerBlock, INIT_STD};

/// Initial contrastive temperature; the parameter itself is log τ.
pub const TAU_INIT: f64 = 0.07;

/// Added to squared norms before the square root when unit-normalizing
/// pooled embeddings.
pub const NORM_EPS: f64 = 1e-12;

/// Dimensions shared by the image and text towers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipConfig {
    pub image_size: usize,
    pub patch: usize,
    pub dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub joint_dim: usize,
    pub text_blocks: usize,
    pub max_text_len: usize,
}

impl Default for ClipConfig {
    fn default() -> Self {
        ClipConfig {
            image_size: 32,
            patch: 4,
            dim: 64,
            heads: 4,
            blocks: 4,
            joint_dim: 64,
            text_blocks: 2,
            max_text_len: 16,
        }
    }
}

impl ClipConfig {
    /// Tokens per side of the patch grid.
    pub fn grid_side(&self) -> usize {
        self.image_size / self.patch
    }

    /// Total patch tokens per image.
    pub fn grid_tokens(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    pub fn vocab_size(&self) -> usize {
        WORDS.len()
    }
}

/// Which encoder snapshot produced a feature grid. The teacher is the
/// frozen contrastive checkpoint; the student is whatever is currently
/// being trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Teacher,
    Student,
}

/// Per-patch features from the image encoder: `[side*side, dim]`.
pub struct FeatureGrid<T: Scalar> {
    pub tokens: Tensor<T>,
    pub side: usize,
    pub provenance: Provenance,
}

impl<T: Scalar> FeatureGrid<T> {
    pub fn dim(&self) -> usize {
        self.tokens.shape()[1]
    }
}

/// Image tower: linear patch embedding, learned positions, pre-norm
/// transformer blocks, final layer norm. A separate pooling head maps
/// the mean token into the joint space; the contrastive temperature
/// lives here too so the image tower checkpoint is self-contained.
pub struct ImageEncoder<T: Scalar> {
    pub cfg: ClipConfig,
    pub params: ParamSet<T>,
    pub provenance: Provenance,
    pub log_tau: Tensor<T>,
    patch: Linear<T>,
    pos: Tensor<T>,
    blocks: Vec<TransformerBlock<T>>,
    lnf: LayerNorm<T>,
    pool: Linear<T>,
}

impl<T: Scalar> ImageEncoder<T> {
    pub fn init<R: Rng>(cfg: &ClipConfig, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let patch = Linear::init(&mut params, "patch", cfg.patch * cfg.patch * 3, cfg.dim, rng);
        let pos = params.insert("pos", Tensor::randn(&[cfg.grid_tokens(), cfg.dim], INIT_STD, rng));
        let blocks = (0..cfg.blocks)
            .map(|i| TransformerBlock::init(&mut params, &format!("blk{i}"), cfg.dim, cfg.heads, rng))
            .collect();
        let lnf = LayerNorm::init(&mut params, "lnf", cfg.dim);
        let pool = Linear::init(&mut params, "pool", cfg.dim, cfg.joint_dim, rng);
        let log_tau = params.insert(
            "log_tau",
            Tensor::param(vec![T::from_f64(TAU_INIT.ln())], &[1]).expect("finite temperature"),
        );
        ImageEncoder {
            cfg: cfg.clone(),
            params,
            provenance: Provenance::Student,
            log_tau,
            patch,
            pos,
            blocks,
            lnf,
            pool,
        }
    }

    /// Run the tower on an already-converted `[S, S, 3]` tensor. Kept
    /// public so callers can feed tracked tensors (e.g. re-encoding a
    /// decoder output) and keep gradients flowing.
    pub fn feature_grid_from(&self, img: &Tensor<T>) -> ClipResult<FeatureGrid<T>> {
        let s = self.cfg.image_size;
        if img.shape() != [s, s, 3] {
            return Err(ClipError::BadImage { expected: s, got: img.shape().to_vec() });
        }
        let mut x = self.patch.forward(&patchify(img, self.cfg.patch)?)?.add(&self.pos)?;
        for block in &self.blocks {
            x = block.forward(&x, None)?;
        }
        Ok(FeatureGrid {
            tokens: self.lnf.forward(&x)?,
            side: self.cfg.grid_side(),
            provenance: self.provenance,
        })
    }

    pub fn feature_grid(&self, img: &Image) -> ClipResult<FeatureGrid<T>> {
        self.feature_grid_from(&image_to_tensor(img))
    }

    /// Mean-pool a grid and project it to a unit vector in the joint
    /// space, shape `[1, joint_dim]`.
    pub fn pool_grid(&self, grid: &FeatureGrid<T>) -> ClipResult<Tensor<T>> {
        let mean = grid.tokens.mean_axis(0)?.reshape(&[1, self.cfg.dim])?;
        Ok(self.pool.forward(&mean)?.l2_normalize_last(NORM_EPS)?)
    }

    /// Full encode: per-patch features plus the pooled joint embedding.
    pub fn encode_image(&self, img: &Image) -> ClipResult<(FeatureGrid<T>, Tensor<T>)> {
        let grid = self.feature_grid(img)?;
        let pooled = self.pool_grid(&grid)?;
        Ok((grid, pooled))
    }

    pub fn embed_image(&self, img: &Image) -> ClipResult<Tensor<T>> {
        self.pool_grid(&self.feature_grid(img)?)
    }

    /// Snapshot with identical values, every parameter frozen, and
    /// `Teacher` provenance on everything it produces.
    pub fn frozen_copy(&self) -> Self {
        // Architecture first (dummy init), then overwrite every value.
        let mut copy = ImageEncoder::init(&self.cfg, &mut StdRng::seed_from_u64(0));
        copy.params.copy_from(&self.params).expect("same architecture");
        copy.params.set_trainable(false);
        copy.provenance = Provenance::Teacher;
        copy
    }
}
