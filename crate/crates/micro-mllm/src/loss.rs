//! Caption training objective and its evaluation metric.

use micro_clip::FeatureGrid;
use tensor_core::{Scalar, Tensor};

use crate::error::{MllmError, MllmResult};
use crate::model::MllmModel;

impl<T: Scalar> MllmModel<T> {
    /// Next-token cross-entropy for captioning one image.
    ///
    /// The sequence is `[image tokens; caption; queries]`. Loss terms
    /// sit at text positions only: the state at caption position i
    /// predicts caption token i+1. The first caption token acts as the
    /// start symbol, and image and query positions contribute no
    /// terms, though image tokens still condition every prediction
    /// through attention.
    pub fn caption_loss(
        &self,
        image: &FeatureGrid<T>,
        caption: &[usize],
    ) -> MllmResult<Tensor<T>> {
        if caption.is_empty() {
            return Err(MllmError::EmptyCaption);
        }
        if caption.len() < 2 {
            return Err(MllmError::CaptionTooShort(caption.len()));
        }
        let seq = self.build_sequence(&[image], caption, true)?;
        let states = self.forward_hidden(&seq)?;
        let ctx = states.narrow(0, seq.img_end(), caption.len() - 1)?;
        let logits = self.lm_logits(&ctx)?;
        Ok(logits.cross_entropy(&caption[1..])?)
    }
}

/// Corpus perplexity: exp of the cross-entropy per predicted token,
/// weighting every caption by its number of next-token targets.
pub fn perplexity<T: Scalar>(
    model: &MllmModel<T>,
    samples: &[(FeatureGrid<T>, Vec<usize>)],
) -> MllmResult<f64> {
    if samples.is_empty() {
        return Err(MllmError::EmptyEvalSet);
    }
    let mut total = 0.0;
    let mut targets = 0usize;
    for (image, caption) in samples {
        let loss = model.caption_loss(image, caption)?;
        let n = caption.len() - 1;
        total += loss.item().to_f64() * n as f64;
        targets += n;
    }
    Ok((total / targets as f64).exp())
}
