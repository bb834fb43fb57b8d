//! Parameterized layers shared across the model crates.
//!
//! Each layer registers its tensors into a [`ParamSet`] under a dotted
//! name prefix at construction, so optimizers, checkpoints, and freeze
//! contracts all address parameters by the same stable names.

use rand::Rng;
use tensor_core::{merge_heads, scaled_dot_attention, split_heads, ParamSet, Scalar, Tensor, TensorResult};

/// Shared layer-norm epsilon.
pub const LN_EPS: f64 = 1e-5;

/// Initialization scale for weight matrices and embeddings.
pub const INIT_STD: f64 = 0.02;

/// Additive mask value that zeroes an attention weight exactly after
/// softmax (exp(-1e9) underflows to 0.0).
pub const MASK_OFF: f64 = -1e9;

pub struct Linear<T: Scalar> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn init<R: Rng>(
        params: &mut ParamSet<T>,
        prefix: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        Linear {
            w: params.insert(format!("{prefix}.w"), Tensor::randn(&[d_in, d_out], INIT_STD, rng)),
            b: params.insert(
                format!("{prefix}.b"),
                Tensor::param(vec![T::ZERO; d_out], &[d_out]).expect("zero bias"),
            ),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> TensorResult<Tensor<T>> {
        x.matmul(&self.w)?.add(&self.b)
    }
}

pub struct LayerNorm<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn init(params: &mut ParamSet<T>, prefix: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: params.insert(
                format!("{prefix}.g"),
                Tensor::param(vec![T::ONE; dim], &[dim]).expect("unit scale"),
            ),
            beta: params.insert(
                format!("{prefix}.b"),
                Tensor::param(vec![T::ZERO; dim], &[dim]).expect("zero shift"),
            ),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> TensorResult<Tensor<T>> {
        x.layernorm(&self.gamma, &self.beta, LN_EPS)
    }
}

pub struct Embedding<T: Scalar> {
    pub table: Tensor<T>,
}

impl<T: Scalar> Embedding<T> {
    pub fn init<R: Rng>(
        params: &mut ParamSet<T>,
        prefix: &str,
        vocab: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        Embedding {
            table: params
                .insert(format!("{prefix}.table"), Tensor::randn(&[vocab, dim], INIT_STD, rng)),
        }
    }

    pub fn forward(&self, ids: &[usize]) -> TensorResult<Tensor<T>> {
        self.table.embed(ids)
    }
}

/// Pre-norm transformer block: self-attention then a GELU MLP, both
/// residual. An optional `[S, S]` additive mask restricts attention.
pub struct TransformerBlock<T: Scalar> {
    pub ln1: LayerNorm<T>,
    pub wq: Linear<T>,
    pub wk: Linear<T>,
    pub wv: Linear<T>,
    pub wo: Linear<T>,
    pub ln2: LayerNorm<T>,
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
    pub heads: usize,
}

impl<T: Scalar> TransformerBlock<T> {
    pub fn init<R: Rng>(
        params: &mut ParamSet<T>,
        prefix: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        assert!(dim % heads == 0, "dim {dim} not divisible by heads {heads}");
        TransformerBlock {
            ln1: LayerNorm::init(params, &format!("{prefix}.ln1"), dim),
            wq: Linear::init(params, &format!("{prefix}.wq"), dim, dim, rng),
            wk: Linear::init(params, &format!("{prefix}.wk"), dim, dim, rng),
            wv: Linear::init(params, &format!("{prefix}.wv"), dim, dim, rng),
            wo: Linear::init(params, &format!("{prefix}.wo"), dim, dim, rng),
            ln2: LayerNorm::init(params, &format!("{prefix}.ln2"), dim),
            fc1: Linear::init(params, &format!("{prefix}.fc1"), dim, 4 * dim, rng),
            fc2: Linear::init(params, &format!("{prefix}.fc2"), 4 * dim, dim, rng),
            heads,
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mask: Option<&Tensor<T>>) -> TensorResult<Tensor<T>> {
        let h = self.ln1.forward(x)?;
        let q = split_heads(&self.wq.forward(&h)?, self.heads)?;
        let k = split_heads(&self.wk.forward(&h)?, self.heads)?;
        let v = split_heads(&self.wv.forward(&h)?, self.heads)?;
        let attn = merge_heads(&scaled_dot_attention(&q, &k, &v, mask)?)?;
        let x = x.add(&self.wo.forward(&attn)?)?;
        let h = self.ln2.forward(&x)?;
        x.add(&self.fc2.forward(&self.fc1.forward(&h)?.gelu()?)?)
    }
}

/// Strictly causal additive mask: position i may attend to j <= i.
pub fn causal_mask<T: Scalar>(len: usize) -> Tensor<T> {
    let mut data = vec![T::ZERO; len * len];
    let off = T::from_f64(MASK_OFF);
    for i in 0..len {
        for j in i + 1..len {
            data[i * len + j] = off;
        }
    }
    Tensor::from_vec(data, &[len, len]).expect("finite mask")
}

/// Bring a raster image into tensor form, `[S, S, 3]`, untracked.
pub fn image_to_tensor<T: Scalar>(img: &shape_world::Image) -> Tensor<T> {
    let data = img.data.iter().map(|&v| T::from_f64(v as f64)).collect();
    Tensor::from_vec(data, &[img.size, img.size, 3]).expect("finite image")
}

/// Inverse of [`image_to_tensor`], clamping into the unit interval.
pub fn tensor_to_image<T: Scalar>(t: &Tensor<T>) -> shape_world::Image {
    let shape = t.shape();
    assert!(shape.len() == 3 && shape[0] == shape[1] && shape[2] == 3, "want [S, S, 3], got {shape:?}");
    let data = t.data().iter().map(|v| (v.to_f64() as f32).clamp(0.0, 1.0)).collect();
    shape_world::Image { size: shape[0], data }
}
