//! The velocity network: a transformer over latent tokens with
//! cross-attention to conditioning tokens and timestep modulation.

use micro_clip::nn::{LayerNorm, Linear};
use rand::Rng;
use serde::{Deserialize, Serialize};
use tensor_core::{merge_heads, scaled_dot_attention, split_heads, ParamSet, Scalar, Tensor};

use crate::error::{DitError, DitResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DitConfig {
    /// Number of latent tokens in a generated grid. Fixed, because the
    /// position table is what lets the field assign each token its own
    /// target; without it the network is permutation-equivariant and
    /// cannot route noise tokens to distinct grid cells.
    pub tokens: usize,
    /// Latent token dimension (the feature-grid dimension it generates).
    pub d: usize,
    /// Internal model width.
    pub width: usize,
    pub blocks: usize,
    pub heads: usize,
    /// Width of incoming conditioning tokens.
    pub d_cond: usize,
    /// Probability of replacing the condition with the null embedding
    /// during training (classifier-free guidance support).
    pub cond_dropout: f64,
}

impl Default for DitConfig {
    fn default() -> Self {
        DitConfig {
            tokens: 64,
            d: 64,
            width: 128,
            blocks: 4,
            heads: 4,
            d_cond: 128,
            cond_dropout: 0.1,
        }
    }
}

/// Sinusoidal features of a scalar time, `[1, dim]`, untracked.
pub fn timestep_features<T: Scalar>(t: f64, dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut out = vec![T::ZERO; dim];
    for i in 0..half {
        let freq = (10_000f64).powf(-(i as f64) / half as f64);
        let angle = t * 1000.0 * freq;
        out[i] = T::from_f64(angle.sin());
        out[half + i] = T::from_f64(angle.cos());
    }
    Tensor::from_vec(out, &[1, dim]).expect("finite features")
}

/// One slice of the six-way modulation vector, as a broadcastable row.
fn mod_slice<T: Scalar>(m: &Tensor<T>, idx: usize, width: usize) -> DitResult<Tensor<T>> {
    Ok(m.narrow(1, idx * width, width)?.reshape(&[width])?)
}

/// `ln(x) * (1 + scale) + shift` with scale and shift taken from the
/// timestep modulation. Zero modulation reduces to plain layer norm.
fn modulate<T: Scalar>(
    x: &Tensor<T>,
    ln: &LayerNorm<T>,
    m: &Tensor<T>,
    idx: usize,
    width: usize,
) -> DitResult<Tensor<T>> {
    let scale = mod_slice(m, 2 * idx, width)?.add_const(1.0)?;
    let shift = mod_slice(m, 2 * idx + 1, width)?;
    Ok(ln.forward(x)?.mul(&scale)?.add(&shift)?)
}

pub struct DitBlock<T: Scalar> {
    adaln: Linear<T>,
    ln1: LayerNorm<T>,
    wq: Linear<T>,
    wk: Linear<T>,
    wv: Linear<T>,
    wo: Linear<T>,
    ln2: LayerNorm<T>,
    xq: Linear<T>,
    xk: Linear<T>,
    xv: Linear<T>,
    xo: Linear<T>,
    ln3: LayerNorm<T>,
    fc1: Linear<T>,
    fc2: Linear<T>,
    heads: usize,
}

impl<T: Scalar> DitBlock<T> {
    fn init<R: Rng>(params: &mut ParamSet<T>, prefix: &str, cfg: &DitConfig, rng: &mut R) -> Self {
        let w = cfg.width;
        let adaln = Linear::init(params, &format!("{prefix}.adaln"), w, 6 * w, rng);
        // Zero modulation weights make every sublayer start from plain
        // layer norm regardless of timestep.
        adaln.w.set_data(&vec![T::ZERO; 6 * w * w]);
        DitBlock {
            adaln,
            ln1: LayerNorm::init(params, &format!("{prefix}.ln1"), w),
            wq: Linear::init(params, &format!("{prefix}.wq"), w, w, rng),
            wk: Linear::init(params, &format!("{prefix}.wk"), w, w, rng),
            wv: Linear::init(params, &format!("{prefix}.wv"), w, w, rng),
            wo: Linear::init(params, &format!("{prefix}.wo"), w, w, rng),
            ln2: LayerNorm::init(params, &format!("{prefix}.ln2"), w),
            xq: Linear::init(params, &format!("{prefix}.xq"), w, w, rng),
            xk: Linear::init(params, &format!("{prefix}.xk"), cfg.d_cond, w, rng),
            xv: Linear::init(params, &format!("{prefix}.xv"), cfg.d_cond, w, rng),
            xo: Linear::init(params, &format!("{prefix}.xo"), w, w, rng),
            ln3: LayerNorm::init(params, &format!("{prefix}.ln3"), w),
            fc1: Linear::init(params, &format!("{prefix}.fc1"), w, 4 * w, rng),
            fc2: Linear::init(params, &format!("{prefix}.fc2"), 4 * w, w, rng),
            heads: cfg.heads,
        }
    }

    fn forward(&self, x: &Tensor<T>, t_emb: &Tensor<T>, cond: &Tensor<T>) -> DitResult<Tensor<T>> {
        let width = x.shape()[1];
        let m = self.adaln.forward(&t_emb.gelu()?)?;

        let h = modulate(x, &self.ln1, &m, 0, width)?;
        let q = split_heads(&self.wq.forward(&h)?, self.heads)?;
        let k = split_heads(&self.wk.forward(&h)?, self.heads)?;
        let v = split_heads(&self.wv.forward(&h)?, self.heads)?;
        let x = x.add(&self.wo.forward(&merge_heads(&scaled_dot_attention(&q, &k, &v, None)?)?)?)?;

        let h = modulate(&x, &self.ln2, &m, 1, width)?;
        let q = split_heads(&self.xq.forward(&h)?, self.heads)?;
        let k = split_heads(&self.xk.forward(cond)?, self.heads)?;
        let v = split_heads(&self.xv.forward(cond)?, self.heads)?;
        let x = x.add(&self.xo.forward(&merge_heads(&scaled_dot_attention(&q, &k, &v, None)?)?)?)?;

        let h = modulate(&x, &self.ln3, &m, 2, width)?;
        Ok(x.add(&self.fc2.forward(&self.fc1.forward(&h)?.gelu()?)?)?)
    }
}

/// Velocity network `v(x, t, cond)`, mapping latent tokens to latent
/// velocities of the same shape.
pub struct DitModel<T: Scalar> {
    pub cfg: DitConfig,
    pub params: ParamSet<T>,
    proj_in: Linear<T>,
    pos: Tensor<T>,
    t_fc1: Linear<T>,
    t_fc2: Linear<T>,
    blocks: Vec<DitBlock<T>>,
    lnf: LayerNorm<T>,
    proj_out: Linear<T>,
    null_cond: Tensor<T>,
}

impl<T: Scalar> DitModel<T> {
    pub fn init<R: Rng>(cfg: &DitConfig, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let proj_in = Linear::init(&mut params, "in", cfg.d, cfg.width, rng);
        let pos = params.insert(
            "pos",
            Tensor::randn(&[cfg.tokens, cfg.width], micro_clip::nn::INIT_STD, rng),
        );
        let t_fc1 = Linear::init(&mut params, "t.fc1", cfg.width, cfg.width, rng);
        let t_fc2 = Linear::init(&mut params, "t.fc2", cfg.width, cfg.width, rng);
        let blocks = (0..cfg.blocks)
            .map(|i| DitBlock::init(&mut params, &format!("blk{i}"), cfg, rng))
            .collect();
        let lnf = LayerNorm::init(&mut params, "lnf", cfg.width);
        let proj_out = Linear::init(&mut params, "out", cfg.width, cfg.d, rng);
        let null_cond = params.insert(
            "null_cond",
            Tensor::randn(&[1, cfg.d_cond], micro_clip::nn::INIT_STD, rng),
        );
        DitModel {
            cfg: cfg.clone(),
            params,
            proj_in,
            pos,
            t_fc1,
            t_fc2,
            blocks,
            lnf,
            proj_out,
            null_cond,
        }
    }

    /// The learned stand-in condition for "no condition", `[1, d_cond]`.
    pub fn null_condition(&self) -> Tensor<T> {
        self.null_cond.clone()
    }

    /// Predicted velocity for latent tokens `x` (`[tokens, d]`) at time
    /// `t` under conditioning tokens `cond` (`[l_cond, d_cond]`). Any
    /// finite `t` is accepted; training objectives restrict the range.
    pub fn velocity(&self, x: &Tensor<T>, t: f64, cond: &Tensor<T>) -> DitResult<Tensor<T>> {
        if x.shape() != [self.cfg.tokens, self.cfg.d] {
            return Err(DitError::ShapeMismatch {
                expected: vec![self.cfg.tokens, self.cfg.d],
                got: x.shape().to_vec(),
            });
        }
        match cond.shape() {
            [_, d] if *d == self.cfg.d_cond => {}
            other => {
                return Err(DitError::ShapeMismatch {
                    expected: vec![0, self.cfg.d_cond],
                    got: other.to_vec(),
                })
            }
        }

        let feats = timestep_features::<T>(t, self.cfg.width);
        let t_emb = self.t_fc2.forward(&self.t_fc1.forward(&feats)?.gelu()?)?;
        let mut h = self.proj_in.forward(x)?.add(&self.pos)?;
        for blk in &self.blocks {
            h = blk.forward(&h, &t_emb, cond)?;
        }
        Ok(self.proj_out.forward(&self.lnf.forward(&h)?)?)
    }
}
