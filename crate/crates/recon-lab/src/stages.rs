//! The two-stage reconstruction objective.
//!
//! Stage 1 trains only the projector and decoder against a frozen
//! encoder (pixel MSE plus perceptual distance). Stage 2 unfreezes the
//! encoder and adds a self-distillation term that pins its features to
//! a frozen teacher snapshot, so reconstruction quality can improve
//! without the features drifting away from what the contrastive
//! training learned.

use micro_clip::nn::image_to_tensor;
use micro_clip::ImageEncoder;
use serde::{Deserialize, Serialize};
use shape_world::Image;
use tensor_core::{mse, Scalar, Tensor};

use crate::error::{ReconError, ReconResult};
use crate::model::ReconModel;
use crate::perceptual::PerceptualNet;

/// Logged scalar terms of a reconstruction loss.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse: f64,
    pub lpips: f64,
    pub distill: f64,
    pub total: f64,
}

/// A differentiable total plus its logged terms.
pub struct StageLoss<T: Scalar> {
    pub total: Tensor<T>,
    pub parts: LossBreakdown,
}

/// Stage-2 knobs: self-distillation weight, perceptual weight, frozen
/// teacher snapshot.
pub struct Stage2LossCfg<T: Scalar> {
    pub lambda: f64,
    pub lpips_weight: f64,
    pub teacher: ImageEncoder<T>,
}

impl<T: Scalar> Stage2LossCfg<T> {
    pub fn new(teacher: ImageEncoder<T>) -> Self {
        Stage2LossCfg { lambda: 1.0, lpips_weight: 1.0, teacher }
    }
}

/// MSE plus weighted perceptual distance for a reconstruction already
/// in tensor form. Exposed so callers can score arbitrary reconstructions
/// without re-running an encoder.
pub fn recon_terms<T: Scalar>(
    recon: &Tensor<T>,
    target: &Tensor<T>,
    net: &PerceptualNet<T>,
    lpips_weight: f64,
) -> ReconResult<(Tensor<T>, f64, f64)> {
    let m = mse(recon, target)?;
    let p = net.distance(recon, target)?;
    let total = m.add(&p.scale(lpips_weight)?)?;
    Ok((total, m.item().to_f64(), p.item().to_f64()))
}

/// Stage-1 objective. The encoder must be frozen; gradients reach only
/// the projector and decoder.
pub fn stage1_loss<T: Scalar>(
    model: &ReconModel<T>,
    img: &Image,
    net: &PerceptualNet<T>,
    lpips_weight: f64,
) -> ReconResult<StageLoss<T>> {
    for (name, p) in model.encoder.params.iter() {
        if p.is_trainable() {
            return Err(ReconError::EncoderNotFrozen(name.clone()));
        }
    }
    let recon = model.reconstruct(img)?;
    let (total, m, p) = recon_terms(&recon, &image_to_tensor(img), net, lpips_weight)?;
    let parts = LossBreakdown { mse: m, lpips: p, distill: 0.0, total: total.item().to_f64() };
    Ok(StageLoss { total, parts })
}

/// Stage-2 objective: pixel terms plus `lambda` times the mean squared
/// difference between the student's and the frozen teacher's feature
/// grids.
pub fn stage2_loss<T: Scalar>(
    model: &ReconModel<T>,
    img: &Image,
    cfg: &Stage2LossCfg<T>,
    net: &PerceptualNet<T>,
) -> ReconResult<StageLoss<T>> {
    if cfg.lambda < 0.0 {
        return Err(ReconError::BadLambda(cfg.lambda));
    }
    for (name, p) in cfg.teacher.params.iter() {
        if p.is_trainable() {
            return Err(ReconError::TeacherNotFrozen(name.clone()));
        }
    }
    let student = model.encoder.feature_grid(img)?;
    let teacher = cfg.teacher.feature_grid(img)?;
    if student.tokens.shape() != teacher.tokens.shape() {
        return Err(ReconError::GridMismatch {
            teacher: teacher.tokens.shape().to_vec(),
            student: student.tokens.shape().to_vec(),
        });
    }
    let recon = model.decode_grid(&student)?;
    let (pixel_total, m, p) = recon_terms(&recon, &image_to_tensor(img), net, cfg.lpips_weight)?;
    let distill = mse(&student.tokens, &teacher.tokens)?;
    let total = pixel_total.add(&distill.scale(cfg.lambda)?)?;
    let parts = LossBreakdown {
        mse: m,
        lpips: p,
        distill: distill.item().to_f64(),
        total: total.item().to_f64(),
    };
    Ok(StageLoss { total, parts })
}

/// Mean per-token L2 distance between two encoders' feature grids over
/// a dataset. Zero images yields zero drift.
pub fn feature_drift<T: Scalar>(
    teacher: &ImageEncoder<T>,
    student: &ImageEncoder<T>,
    images: &[Image],
) -> ReconResult<f64> {
    if teacher.cfg != student.cfg {
        return Err(ReconError::ArchMismatch);
    }
    let mut total = 0.0;
    for img in images {
        let tg = teacher.feature_grid(img)?;
        let sg = student.feature_grid(img)?;
        let t = tg.tokens.to_vec();
        let s = sg.tokens.to_vec();
        let dim = tg.dim();
        let tokens = t.len() / dim;
        let mut image_sum = 0.0;
        for i in 0..tokens {
            let mut sq = 0.0;
            for d in 0..dim {
                let diff = t[i * dim + d].to_f64() - s[i * dim + d].to_f64();
                sq += diff * diff;
            }
            image_sum += sq.sqrt();
        }
        total += image_sum / tokens as f64;
    }
    if images.is_empty() {
        Ok(0.0)
    } else {
        Ok(total / images.len() as f64)
    }
}
