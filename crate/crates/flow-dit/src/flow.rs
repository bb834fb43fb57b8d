//! Rectified-flow objective, latent normalization, and the Euler
//! sampler with classifier-free guidance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tensor_core::{mse, Scalar, Tensor, TensorError};

use crate::error::{DitError, DitResult};
use crate::model::DitModel;

/// Floor for per-dimension standard deviations, keeping constant
/// dimensions invertible.
pub const STD_FLOOR: f64 = 1e-6;

/// One training point of the flow: endpoints, the straight-line
/// interpolant, and the constant target velocity along it.
pub struct FlowBatch<T: Scalar> {
    pub x1: Tensor<T>,
    pub x0: Tensor<T>,
    pub t: f64,
    /// `(1 - t) * x0 + t * x1`.
    pub x_t: Tensor<T>,
    /// `x1 - x0`.
    pub v_star: Tensor<T>,
}

impl<T: Scalar> FlowBatch<T> {
    /// Interpolate between noise `x0` and data `x1` at time `t`.
    /// Accepts the closed interval so the endpoint identities can be
    /// exercised; the training loss further restricts `t`.
    pub fn new(x1: Tensor<T>, x0: Tensor<T>, t: f64) -> DitResult<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(DitError::BadInterpolant(t));
        }
        if x1.shape() != x0.shape() {
            return Err(DitError::ShapeMismatch {
                expected: x1.shape().to_vec(),
                got: x0.shape().to_vec(),
            });
        }
        let x_t = x0.scale(1.0 - t)?.add(&x1.scale(t)?)?;
        let v_star = x1.sub(&x0)?;
        Ok(FlowBatch { x1, x0, t, x_t, v_star })
    }
}

/// Flow-matching loss: how far the predicted velocity at `x_t` is from
/// the straight-line velocity. Training times must lie strictly inside
/// `(0, 1)`.
pub fn fm_loss<T: Scalar>(
    dit: &DitModel<T>,
    batch: &FlowBatch<T>,
    cond: &Tensor<T>,
) -> DitResult<Tensor<T>> {
    if !(batch.t > 0.0 && batch.t < 1.0) {
        return Err(DitError::BadTime(batch.t));
    }
    let v = dit.velocity(&batch.x_t, batch.t, cond)?;
    Ok(mse(&v, &batch.v_star)?)
}

/// Per-dimension normalization statistics of the latent space, fit on
/// the training split and stored alongside the generator weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LatentStats {
    /// Accumulate mean and standard deviation over every token row of
    /// every grid. Standard deviations are floored at [`STD_FLOOR`].
    pub fn fit<T: Scalar>(grids: &[Tensor<T>]) -> DitResult<LatentStats> {
        let dim = match grids.first().map(|g| g.shape()) {
            None => return Err(DitError::EmptyStats),
            Some([_, d]) => *d,
            Some(other) => {
                return Err(DitError::ShapeMismatch { expected: vec![0, 0], got: other.to_vec() })
            }
        };
        let mut sum = vec![0.0f64; dim];
        let mut sq = vec![0.0f64; dim];
        let mut rows = 0usize;
        for g in grids {
            match g.shape() {
                [r, d] if *d == dim => rows += r,
                other => {
                    return Err(DitError::ShapeMismatch {
                        expected: vec![0, dim],
                        got: other.to_vec(),
                    })
                }
            }
            for (i, v) in g.data().iter().enumerate() {
                let v = v.to_f64();
                sum[i % dim] += v;
                sq[i % dim] += v * v;
            }
        }
        let n = rows as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| (s / n - m * m).max(0.0).sqrt().max(STD_FLOOR))
            .collect();
        Ok(LatentStats { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check<T: Scalar>(&self, x: &Tensor<T>) -> DitResult<()> {
        match x.shape() {
            [_, d] if *d == self.dim() => Ok(()),
            [_, d] => Err(DitError::StatsDimMismatch { expected: self.dim(), got: *d }),
            other => Err(DitError::ShapeMismatch {
                expected: vec![0, self.dim()],
                got: other.to_vec(),
            }),
        }
    }

    fn rows<T: Scalar>(&self) -> (Tensor<T>, Tensor<T>) {
        let mean: Vec<T> = self.mean.iter().map(|&v| T::from_f64(v)).collect();
        let std: Vec<T> = self.std.iter().map(|&v| T::from_f64(v)).collect();
        let d = self.dim();
        (
            Tensor::from_vec(mean, &[d]).expect("finite mean"),
            Tensor::from_vec(std, &[d]).expect("finite std"),
        )
    }

    /// `(x - mean) / std`, rowwise.
    pub fn normalize<T: Scalar>(&self, x: &Tensor<T>) -> DitResult<Tensor<T>> {
        self.check(x)?;
        let (mean, std) = self.rows::<T>();
        Ok(x.sub(&mean)?.div(&std)?)
    }

    /// Inverse of [`LatentStats::normalize`].
    pub fn denormalize<T: Scalar>(&self, x: &Tensor<T>) -> DitResult<Tensor<T>> {
        self.check(x)?;
        let (mean, std) = self.rows::<T>();
        Ok(x.mul(&std)?.add(&mean)?)
    }
}

/// Integrate the learned velocity field from pure noise to a latent
/// sample with `k` Euler steps and guidance weight `w`.
///
/// The initial state is standard normal, drawn from a ChaCha8 stream of
/// `seed`, so a (seed, condition) pair fully determines the output. At
/// `w = 1` the null-condition branch is never evaluated; otherwise each
/// step combines `v_null + w * (v_cond - v_null)`.
pub fn sample<T: Scalar>(
    dit: &DitModel<T>,
    cond: &Tensor<T>,
    tokens: usize,
    k: usize,
    w: f64,
    seed: u64,
) -> DitResult<Tensor<T>> {
    if k == 0 {
        return Err(DitError::NoSteps);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Tensor::<T>::randn(&[tokens, dit.cfg.d], 1.0, &mut rng).detach();
    let dt = 1.0 / k as f64;
    for step in 0..k {
        let t = step as f64 * dt;
        let advanced = (|| -> DitResult<Tensor<T>> {
            let v = if w == 1.0 {
                dit.velocity(&x, t, cond)?
            } else {
                let v_cond = dit.velocity(&x, t, cond)?;
                let v_null = dit.velocity(&x, t, &dit.null_condition())?;
                v_null.add(&v_cond.sub(&v_null)?.scale(w)?)?
            };
            Ok(x.add(&v.scale(dt)?)?)
        })();
        x = match advanced {
            Ok(next) => next.detach(),
            Err(DitError::Tensor(TensorError::NonFinite { .. })) => {
                return Err(DitError::NonFiniteState { step })
            }
            Err(other) => return Err(other),
        };
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DitConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> DitConfig {
        DitConfig { tokens: 4, d: 8, width: 16, blocks: 2, heads: 2, d_cond: 12, cond_dropout: 0.1 }
    }

    fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::randn(shape, 1.0, &mut rng).detach()
    }

    #[test]
    fn interpolation_endpoints_are_exact() {
        for seed in 0..20 {
            let x1 = randn(&[4, 8], seed);
            let x0 = randn(&[4, 8], 1000 + seed);
            let start = FlowBatch::new(x1.clone(), x0.clone(), 0.0).unwrap();
            assert_eq!(start.x_t.to_vec(), x0.to_vec());
            let end = FlowBatch::new(x1.clone(), x0.clone(), 1.0).unwrap();
            assert_eq!(end.x_t.to_vec(), x1.to_vec());
            let mid = FlowBatch::new(x1.clone(), x0.clone(), 0.25).unwrap();
            for ((m, a), b) in mid.x_t.to_vec().iter().zip(x0.to_vec()).zip(x1.to_vec()) {
                assert!((m - (0.75 * a + 0.25 * b)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn degenerate_times_are_rejected() {
        let x = randn(&[2, 8], 0);
        assert!(matches!(
            FlowBatch::new(x.clone(), x.clone(), -0.1),
            Err(DitError::BadInterpolant(_))
        ));
        assert!(matches!(
            FlowBatch::new(x.clone(), x.clone(), 1.5),
            Err(DitError::BadInterpolant(_))
        ));

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let dit = DitModel::<f64>::init(&tiny_cfg(), &mut rng);
        let cond = randn(&[3, 12], 1);
        for t in [0.0, 1.0] {
            let batch = FlowBatch::new(randn(&[4, 8], 2), randn(&[4, 8], 3), t).unwrap();
            assert!(matches!(fm_loss(&dit, &batch, &cond), Err(DitError::BadTime(_))));
        }
    }

    #[test]
    fn zero_output_model_scores_zero_on_zero_velocity_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dit = DitModel::<f64>::init(&tiny_cfg(), &mut rng);
        for name in ["out.w", "out.b"] {
            let p = dit.params.get(name).unwrap();
            p.set_data(&vec![0.0; p.numel()]);
        }
        let x = randn(&[4, 8], 7);
        let batch = FlowBatch::new(x.clone(), x, 0.5).unwrap();
        assert!(batch.v_star.to_vec().iter().all(|&v| v == 0.0));
        let loss = fm_loss(&dit, &batch, &randn(&[3, 12], 8)).unwrap();
        assert_eq!(loss.item(), 0.0);
    }

    #[test]
    fn latent_stats_normalize_and_invert() {
        let grids: Vec<Tensor<f64>> = (0..5)
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let base = Tensor::randn(&[6, 4], 3.0, &mut rng).detach();
                base.add_const(2.5).unwrap()
            })
            .collect();
        let stats = LatentStats::fit(&grids).unwrap();
        assert_eq!(stats.dim(), 4);

        let normed = stats.normalize(&grids[0]).unwrap();
        let back = stats.denormalize(&normed).unwrap();
        for (a, b) in back.to_vec().iter().zip(grids[0].to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }

        let all = Tensor::concat(&grids.iter().map(|g| stats.normalize(g).unwrap()).collect::<Vec<_>>(), 0)
            .unwrap();
        let flat = all.to_vec();
        for d in 0..4 {
            let col: Vec<f64> = flat.iter().skip(d).step_by(4).cloned().collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-9, "dim {d} mean {mean}");
            assert!((var - 1.0).abs() < 1e-9, "dim {d} var {var}");
        }
    }

    #[test]
    fn constant_dimension_stays_invertible() {
        let flat = Tensor::from_vec(vec![3.0f64; 12], &[6, 2]).unwrap();
        let stats = LatentStats::fit(&[flat.clone()]).unwrap();
        assert_eq!(stats.std, vec![STD_FLOOR, STD_FLOOR]);
        let round = stats.denormalize(&stats.normalize(&flat).unwrap()).unwrap();
        for (a, b) in round.to_vec().iter().zip(flat.to_vec()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(matches!(LatentStats::fit::<f64>(&[]), Err(DitError::EmptyStats)));
    }

    #[test]
    fn zero_velocity_sampler_returns_the_initial_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dit = DitModel::<f64>::init(&tiny_cfg(), &mut rng);
        for name in ["out.w", "out.b"] {
            let p = dit.params.get(name).unwrap();
            p.set_data(&vec![0.0; p.numel()]);
        }
        let cond = randn(&[3, 12], 5);
        let out = sample(&dit, &cond, 4, 50, 1.0, 99).unwrap();

        let mut noise_rng = ChaCha8Rng::seed_from_u64(99);
        let noise = Tensor::<f64>::randn(&[4, 8], 1.0, &mut noise_rng);
        assert_eq!(out.to_vec(), noise.to_vec());

        assert!(matches!(sample(&dit, &cond, 4, 0, 1.0, 0), Err(DitError::NoSteps)));
    }

    #[test]
    fn unit_guidance_never_evaluates_the_null_branch() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dit = DitModel::<f64>::init(&tiny_cfg(), &mut rng);
        let null = dit.params.get("null_cond").unwrap();
        null.set_data(&vec![f64::NAN; null.numel()]);

        let cond = randn(&[3, 12], 7);
        let out = sample(&dit, &cond, 4, 5, 1.0, 11).unwrap();
        assert!(out.to_vec().iter().all(|v| v.is_finite()));

        assert!(matches!(
            sample(&dit, &cond, 4, 5, 3.0, 11),
            Err(DitError::NonFiniteState { step: 0 })
        ));
    }

    #[test]
    fn sampling_is_deterministic_in_the_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dit = DitModel::<f64>::init(&tiny_cfg(), &mut rng);
        let cond = randn(&[3, 12], 9);
        let a = sample(&dit, &cond, 4, 10, 3.0, 42).unwrap().to_vec();
        let b = sample(&dit, &cond, 4, 10, 3.0, 42).unwrap().to_vec();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = sample(&dit, &cond, 4, 10, 3.0, 43).unwrap().to_vec();
        assert_ne!(a, c);
    }
}
