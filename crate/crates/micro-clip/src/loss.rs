//! Symmetric contrastive objective and retrieval evaluation.

use rand::Rng;
use shape_world::Image;
use tensor_core::{ParamSet, Scalar, Tensor, TensorResult};

use crate::encoder::{ClipConfig, ImageEncoder};
use crate::error::{ClipError, ClipResult};
use crate::text::TextEncoder;

/// Both towers plus a merged parameter view for joint training. Image
/// parameters appear as `img.*`, text parameters as `txt.*`; all three
/// views share storage.
pub struct ClipModel<T: Scalar> {
    pub image: ImageEncoder<T>,
    pub text: TextEncoder<T>,
    pub params: ParamSet<T>,
}

impl<T: Scalar> ClipModel<T> {
    pub fn init<R: Rng>(cfg: &ClipConfig, rng: &mut R) -> Self {
        let image = ImageEncoder::init(cfg, rng);
        let text = TextEncoder::init(cfg, rng);
        let mut params = ParamSet::new();
        params.merge("img", image.params.clone());
        params.merge("txt", text.params.clone());
        ClipModel { image, text, params }
    }

    pub fn frozen_copy(&self) -> Self {
        let image = self.image.frozen_copy();
        let text = self.text.frozen_copy();
        let mut params = ParamSet::new();
        params.merge("img", image.params.clone());
        params.merge("txt", text.params.clone());
        ClipModel { image, text, params }
    }

    /// Stack pooled embeddings for a batch: `([B, joint], [B, joint])`.
    pub fn embed_batch(&self, batch: &[(Image, Vec<usize>)]) -> ClipResult<(Tensor<T>, Tensor<T>)> {
        let imgs: Vec<Tensor<T>> = batch
            .iter()
            .map(|(img, _)| self.image.embed_image(img))
            .collect::<ClipResult<_>>()?;
        let txts: Vec<Tensor<T>> = batch
            .iter()
            .map(|(_, cap)| self.text.embed_text(cap))
            .collect::<ClipResult<_>>()?;
        Ok((Tensor::concat(&imgs, 0)?, Tensor::concat(&txts, 0)?))
    }

    /// Symmetric InfoNCE over a batch of (image, caption) pairs.
    ///
    /// The diagonal is the positive pair by construction, so captions
    /// must be pairwise distinct; a duplicate would make the loss
    /// punish a correct match.
    pub fn infonce_loss(&self, batch: &[(Image, Vec<usize>)]) -> ClipResult<Tensor<T>> {
        if batch.len() < 2 {
            return Err(ClipError::BatchTooSmall(batch.len()));
        }
        for i in 0..batch.len() {
            for j in i + 1..batch.len() {
                if batch[i].1 == batch[j].1 {
                    return Err(ClipError::DuplicateCaption(i, j));
                }
            }
        }
        let (img, txt) = self.embed_batch(batch)?;
        Ok(infonce_from_embeddings(&img, &txt, &self.image.log_tau)?)
    }
}

/// Cosine-similarity logits between unit embeddings, scaled by 1/τ.
pub fn similarity_logits<T: Scalar>(
    img: &Tensor<T>,
    txt: &Tensor<T>,
    log_tau: &Tensor<T>,
) -> TensorResult<Tensor<T>> {
    img.matmul(&txt.transpose(0, 1)?)?.div(&log_tau.exp()?)
}

/// Mean of image-to-text and text-to-image cross-entropies, targets on
/// the diagonal.
pub fn infonce_from_embeddings<T: Scalar>(
    img: &Tensor<T>,
    txt: &Tensor<T>,
    log_tau: &Tensor<T>,
) -> TensorResult<Tensor<T>> {
    let logits = similarity_logits(img, txt, log_tau)?;
    let targets: Vec<usize> = (0..logits.shape()[0]).collect();
    let i2t = logits.cross_entropy(&targets)?;
    let t2i = logits.transpose(0, 1)?.cross_entropy(&targets)?;
    i2t.add(&t2i)?.scale(0.5)
}

/// Fraction of rows in `img` whose highest-similarity row in `txt` is
/// their own index. Ties resolve to the lowest index.
pub fn retrieval_at_1<T: Scalar>(img: &Tensor<T>, txt: &Tensor<T>) -> ClipResult<f64> {
    if img.shape().first().copied().unwrap_or(0) == 0 {
        return Err(ClipError::EmptyEvalSet);
    }
    let sims = img.matmul(&txt.transpose(0, 1)?)?;
    let n = sims.shape()[0];
    let data = sims.data();
    let mut hits = 0usize;
    for r in 0..n {
        let row = &data[r * n..(r + 1) * n];
        let mut best = 0usize;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        if best == r {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

/// R@1 of a model over held-out (image, caption) pairs.
pub fn retrieval_eval<T: Scalar>(
    model: &ClipModel<T>,
    pairs: &[(Image, Vec<usize>)],
) -> ClipResult<f64> {
    if pairs.is_empty() {
        return Err(ClipError::EmptyEvalSet);
    }
    let (img, txt) = model.embed_batch(pairs)?;
    retrieval_at_1(&img, &txt)
}
