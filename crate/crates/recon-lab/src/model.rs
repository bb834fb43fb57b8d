//! Feature projector and pixel decoder that invert the image encoder.

use micro_clip::nn::{tensor_to_image, LayerNorm, Linear, TransformerBlock};
use micro_clip::{FeatureGrid, ImageEncoder};
use rand::Rng;
use serde::{Deserialize, Serialize};
use shape_world::Image;
use tensor_core::{unpatchify, ParamSet, Scalar, Tensor};

use crate::error::ReconResult;

/// Widths of the reconstruction head. The projector lifts encoder
/// tokens from `dim` to `d_hat`; the decoder attends over the lifted
/// grid and emits one pixel patch per token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconConfig {
    pub d_hat: usize,
    pub blocks: usize,
    pub heads: usize,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig { d_hat: 128, blocks: 4, heads: 4 }
    }
}

/// Two-layer per-token MLP, `dim -> d_hat` with a GELU between.
pub struct Projector<T: Scalar> {
    pub params: ParamSet<T>,
    fc1: Linear<T>,
    fc2: Linear<T>,
}

impl<T: Scalar> Projector<T> {
    pub fn init<R: Rng>(dim: usize, d_hat: usize, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let fc1 = Linear::init(&mut params, "fc1", dim, d_hat, rng);
        let fc2 = Linear::init(&mut params, "fc2", d_hat, d_hat, rng);
        Projector { params, fc1, fc2 }
    }

    /// `[N, dim] -> [N, d_hat]`, spatial layout untouched.
    pub fn forward(&self, tokens: &Tensor<T>) -> ReconResult<Tensor<T>> {
        Ok(self.fc2.forward(&self.fc1.forward(tokens)?.gelu()?)?)
    }
}

/// Transformer over the projected grid plus a linear head mapping each
/// token to its own `p*p*3` pixel patch, squashed into [0,1].
pub struct PixelDecoder<T: Scalar> {
    pub params: ParamSet<T>,
    blocks: Vec<TransformerBlock<T>>,
    lnf: LayerNorm<T>,
    head: Linear<T>,
    grid_side: usize,
    patch: usize,
}

impl<T: Scalar> PixelDecoder<T> {
    pub fn init<R: Rng>(
        cfg: &ReconConfig,
        grid_side: usize,
        patch: usize,
        rng: &mut R,
    ) -> Self {
        let mut params = ParamSet::new();
        let blocks = (0..cfg.blocks)
            .map(|i| {
                TransformerBlock::init(&mut params, &format!("blk{i}"), cfg.d_hat, cfg.heads, rng)
            })
            .collect();
        let lnf = LayerNorm::init(&mut params, "lnf", cfg.d_hat);
        let head = Linear::init(&mut params, "head", cfg.d_hat, patch * patch * 3, rng);
        PixelDecoder { params, blocks, lnf, head, grid_side, patch }
    }

    /// `[N, d_hat] -> [S, S, 3]` with values in (0, 1).
    pub fn forward(&self, tokens: &Tensor<T>) -> ReconResult<Tensor<T>> {
        let mut x = tokens.clone();
        for block in &self.blocks {
            x = block.forward(&x, None)?;
        }
        let patches = self.head.forward(&self.lnf.forward(&x)?)?.sigmoid()?;
        Ok(unpatchify(&patches, self.grid_side, self.grid_side, self.patch, 3)?)
    }
}

/// Encoder, projector, and decoder wired end to end, with a merged
/// parameter view (`enc.*`, `proj.*`, `dec.*`) over shared storage.
pub struct ReconModel<T: Scalar> {
    pub encoder: ImageEncoder<T>,
    pub projector: Projector<T>,
    pub decoder: PixelDecoder<T>,
    pub params: ParamSet<T>,
}

impl<T: Scalar> ReconModel<T> {
    pub fn new<R: Rng>(encoder: ImageEncoder<T>, cfg: &ReconConfig, rng: &mut R) -> Self {
        let projector = Projector::init(encoder.cfg.dim, cfg.d_hat, rng);
        let decoder = PixelDecoder::init(cfg, encoder.cfg.grid_side(), encoder.cfg.patch, rng);
        let mut params = ParamSet::new();
        params.merge("enc", encoder.params.clone());
        params.merge("proj", projector.params.clone());
        params.merge("dec", decoder.params.clone());
        ReconModel { encoder, projector, decoder, params }
    }

    /// Decode a feature grid back to pixels.
    pub fn decode_grid(&self, grid: &FeatureGrid<T>) -> ReconResult<Tensor<T>> {
        self.decoder.forward(&self.projector.forward(&grid.tokens)?)
    }

    /// Full round trip: encode, project, decode.
    pub fn reconstruct(&self, img: &Image) -> ReconResult<Tensor<T>> {
        self.decode_grid(&self.encoder.feature_grid(img)?)
    }

    pub fn reconstruct_image(&self, img: &Image) -> ReconResult<Image> {
        Ok(tensor_to_image(&self.reconstruct(img)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use micro_clip::ClipConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use shape_world::{gen_scene, render};

    pub(crate) fn tiny_clip_cfg() -> ClipConfig {
        ClipConfig {
            image_size: 8,
            patch: 4,
            dim: 8,
            heads: 2,
            blocks: 1,
            joint_dim: 8,
            text_blocks: 1,
            max_text_len: 8,
        }
    }

    pub(crate) fn tiny_recon_cfg() -> ReconConfig {
        ReconConfig { d_hat: 16, blocks: 1, heads: 2 }
    }

    #[test]
    fn reconstruction_keeps_shape_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let enc = ImageEncoder::<f32>::init(&ClipConfig::default(), &mut rng);
        let model = ReconModel::new(enc, &ReconConfig::default(), &mut rng);
        let img = render(&gen_scene(42));
        let out = model.reconstruct(&img).unwrap();
        assert_eq!(out.shape(), &[32, 32, 3]);
        assert!(out.to_vec().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn untrained_reconstruction_is_near_gray() {
        // Sigmoid of near-zero activations puts every channel close to
        // 0.5, far from the saturated palette colors.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let enc = ImageEncoder::<f32>::init(&tiny_clip_cfg(), &mut rng);
        let model = ReconModel::new(enc, &tiny_recon_cfg(), &mut rng);
        let img = Image { size: 8, data: vec![1.0; 192] };
        let out = model.reconstruct(&img).unwrap();
        let mean: f32 = out.to_vec().iter().sum::<f32>() / 192.0;
        assert!((mean - 0.5).abs() < 0.2, "mean {mean}");
    }

    #[test]
    fn projector_and_decoder_shapes_line_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let proj = Projector::<f64>::init(8, 16, &mut rng);
        let dec = PixelDecoder::<f64>::init(&tiny_recon_cfg(), 2, 4, &mut rng);
        let tokens = Tensor::<f64>::randn(&[4, 8], 1.0, &mut rng);
        tokens.set_trainable(false);
        let lifted = proj.forward(&tokens).unwrap();
        assert_eq!(lifted.shape(), &[4, 16]);
        let img = dec.forward(&lifted).unwrap();
        assert_eq!(img.shape(), &[8, 8, 3]);
    }
}
