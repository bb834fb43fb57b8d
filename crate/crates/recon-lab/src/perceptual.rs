//! Perceptual distance from a frozen, randomly initialized feature
//! net.
//!
//! Random projections preserve enough geometry that distances in
//! feature space still punish structural damage (blur, missing
//! shapes) much harder than pixel MSE does, without importing any
//! pretrained weights. Three stages look at the image through patch
//! sizes S/8, S/4, and S/2, so the distance mixes local and regional
//! structure at any canvas size.

use micro_clip::nn::{image_to_tensor, Linear, TransformerBlock};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shape_world::Image;
use tensor_core::{patchify, ParamSet, Scalar, Tensor};

use crate::error::{ReconError, ReconResult};

/// Feature width of every stage.
pub const PERCEPTUAL_DIM: usize = 32;

/// Divisors of the image size that define the three stage patch sizes.
pub const STAGE_SCALES: [usize; 3] = [8, 4, 2];

struct Stage<T: Scalar> {
    patch: usize,
    embed: Linear<T>,
    block: TransformerBlock<T>,
}

/// Frozen 3-stage feature extractor. Construction is a pure function
/// of `(image_size, seed)`; parameters are never trainable, so
/// gradients flow through its activations to the input but stop at
/// its weights.
pub struct PerceptualNet<T: Scalar> {
    pub image_size: usize,
    pub seed: u64,
    stages: Vec<Stage<T>>,
}

impl<T: Scalar> PerceptualNet<T> {
    pub fn init(image_size: usize, seed: u64) -> Self {
        assert!(
            image_size % 8 == 0,
            "image size {image_size} must be divisible by 8 for the coarsest stage"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let stages = STAGE_SCALES
            .iter()
            .enumerate()
            .map(|(i, scale)| {
                let patch = image_size / scale;
                let embed = Linear::init(
                    &mut params,
                    &format!("s{i}.embed"),
                    patch * patch * 3,
                    PERCEPTUAL_DIM,
                    &mut rng,
                );
                let block = TransformerBlock::init(
                    &mut params,
                    &format!("s{i}.blk"),
                    PERCEPTUAL_DIM,
                    4,
                    &mut rng,
                );
                Stage { patch, embed, block }
            })
            .collect();
        params.set_trainable(false);
        PerceptualNet { image_size, seed, stages }
    }

    /// Per-stage unit-normalized token features for an `[S, S, 3]`
    /// tensor (tracked inputs keep their graph).
    pub fn features(&self, img: &Tensor<T>) -> ReconResult<Vec<Tensor<T>>> {
        self.stages
            .iter()
            .map(|stage| {
                let tokens = stage.embed.forward(&patchify(img, stage.patch)?)?;
                Ok(stage.block.forward(&tokens, None)?.l2_normalize_last(1e-12)?)
            })
            .collect()
    }

    /// Differentiable perceptual distance between two image tensors:
    /// mean over stages of the mean squared feature difference.
    pub fn distance(&self, a: &Tensor<T>, b: &Tensor<T>) -> ReconResult<Tensor<T>> {
        let fa = self.features(a)?;
        let fb = self.features(b)?;
        let mut total: Option<Tensor<T>> = None;
        for (xa, xb) in fa.iter().zip(&fb) {
            let d = tensor_core::mse(xa, xb)?;
            total = Some(match total {
                Some(t) => t.add(&d)?,
                None => d,
            });
        }
        Ok(total.expect("at least one stage").scale(1.0 / self.stages.len() as f64)?)
    }
}

/// Perceptual distance between two rasters of equal size.
pub fn lpips_like<T: Scalar>(net: &PerceptualNet<T>, a: &Image, b: &Image) -> ReconResult<f64> {
    if a.size != b.size {
        return Err(ReconError::SizeMismatch(a.size, b.size));
    }
    Ok(net.distance(&image_to_tensor(a), &image_to_tensor(b))?.item().to_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use shape_world::{gen_scene, render};

    #[test]
    fn distance_to_self_is_exactly_zero() {
        let net = PerceptualNet::<f64>::init(32, 9);
        let img = render(&gen_scene(3));
        assert_eq!(lpips_like(&net, &img, &img).unwrap(), 0.0);
    }

    #[test]
    fn distance_is_symmetric() {
        let net = PerceptualNet::<f64>::init(32, 9);
        let a = render(&gen_scene(4));
        let b = render(&gen_scene(5));
        let ab = lpips_like(&net, &a, &b).unwrap();
        let ba = lpips_like(&net, &b, &a).unwrap();
        assert_eq!(ab, ba);
        assert!(ab > 0.0);
    }

    #[test]
    fn same_seed_nets_are_identical_and_frozen() {
        let x = PerceptualNet::<f64>::init(32, 123);
        let y = PerceptualNet::<f64>::init(32, 123);
        let a = render(&gen_scene(6));
        let b = render(&gen_scene(7));
        assert_eq!(lpips_like(&x, &a, &b).unwrap(), lpips_like(&y, &a, &b).unwrap());
        let t = image_to_tensor::<f64>(&a);
        for f in x.features(&t).unwrap() {
            assert!(f.grad().is_none());
        }
    }

    #[test]
    fn mismatched_sizes_are_rejected() {
        let net = PerceptualNet::<f64>::init(32, 9);
        let a = render(&gen_scene(8));
        let b = Image { size: 64, data: vec![0.0; 64 * 64 * 3] };
        assert!(matches!(lpips_like(&net, &a, &b), Err(ReconError::SizeMismatch(32, 64))));
    }

    #[test]
    fn recolored_scene_is_closer_than_unrelated_scene() {
        // Mean ordering over sampled scene pairs: a recolor keeps all
        // geometry, so its perceptual distance should sit below the
        // distance to an unrelated scene.
        let net = PerceptualNet::<f64>::init(32, 17);
        let mut recolor_total = 0.0;
        let mut unrelated_total = 0.0;
        let mut count = 0usize;
        let mut seed = 60_000u64;
        while count < 100 {
            let scene = gen_scene(seed);
            let other = gen_scene(seed + 100_000);
            seed += 1;
            let mut recolored = scene.clone();
            let new_color = (recolored.objects[0].color + 1) % 8;
            if new_color == recolored.background
                || recolored.objects.iter().any(|o| o.color == new_color)
            {
                continue;
            }
            recolored.objects[0].color = new_color;
            if !recolored.is_valid() {
                continue;
            }
            let base = render(&scene);
            recolor_total += lpips_like(&net, &base, &render(&recolored)).unwrap();
            unrelated_total += lpips_like(&net, &base, &render(&other)).unwrap();
            count += 1;
        }
        assert!(
            recolor_total < unrelated_total,
            "mean recolor distance {} vs unrelated {}",
            recolor_total / count as f64,
            unrelated_total / count as f64
        );
    }

    #[test]
    fn gradient_reaches_a_tracked_input() {
        let net = PerceptualNet::<f64>::init(8, 11);
        let a = Tensor::<f64>::randn(&[8, 8, 3], 0.3, &mut ChaCha8Rng::seed_from_u64(1));
        let b = Tensor::<f64>::zeros(&[8, 8, 3]);
        let d = net.distance(&a, &b).unwrap();
        d.backward().unwrap();
        let g = a.grad().expect("input gradient");
        assert!(g.iter().any(|v| v.abs() > 0.0));
    }
}
