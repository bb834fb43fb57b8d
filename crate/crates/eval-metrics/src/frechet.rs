//! Fréchet distance between embedding distributions.
//!
//! Both sets are embedded (caller supplies the frozen embedder), fit
//! with a Gaussian each, and compared via
//! `||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa Sb)^{1/2})`. The matrix
//! square root uses the similarity identity
//! `tr((Sa Sb)^{1/2}) = tr((Sa^{1/2} Sb Sa^{1/2})^{1/2})` so only
//! symmetric eigendecompositions are needed; eigenvalues are clamped
//! at zero before taking roots.

use nalgebra::{DMatrix, DVector};
use shape_world::Image;

use crate::error::MetricError;

/// Minimum images per set.
pub const FID_MIN_SAMPLES: usize = 64;

/// Diagonal regularization added to every covariance.
pub const COV_REGULARIZATION: f64 = 1e-6;

/// Mean and covariance of a set of embeddings, accumulated in a
/// canonical (sorted) order so shuffled inputs produce bit-identical
/// results. Covariance uses the n-1 normalizer plus diagonal
/// regularization.
fn gaussian_fit(embeddings: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = embeddings.len();
    let d = embeddings[0].len();
    let mut order: Vec<&Vec<f64>> = embeddings.iter().collect();
    order.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut mean = DVector::zeros(d);
    for e in &order {
        for (i, &v) in e.iter().enumerate() {
            mean[i] += v;
        }
    }
    mean /= n as f64;

    let mut cov = DMatrix::zeros(d, d);
    for e in &order {
        let centered = DVector::from_iterator(d, e.iter().enumerate().map(|(i, &v)| v - mean[i]));
        cov += &centered * centered.transpose();
    }
    cov /= (n - 1) as f64;
    for i in 0..d {
        cov[(i, i)] += COV_REGULARIZATION;
    }
    (mean, cov)
}

/// Symmetric PSD square root with eigenvalue clamping.
fn sqrt_sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let roots = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

fn trace_sqrt_product(sa: &DMatrix<f64>, sb: &DMatrix<f64>) -> f64 {
    let root_a = sqrt_sym(sa);
    let inner = &root_a * sb * &root_a;
    let eig = inner.symmetric_eigen();
    eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).sum()
}

/// Fréchet distance between Gaussian fits of two embedding sets.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (mu_a, sig_a) = gaussian_fit(a);
    let (mu_b, sig_b) = gaussian_fit(b);
    let mean_term = (&mu_a - &mu_b).norm_squared();
    let trace_term = sig_a.trace() + sig_b.trace() - 2.0 * trace_sqrt_product(&sig_a, &sig_b);
    (mean_term + trace_term).max(0.0)
}

/// Fréchet distance between two image sets under a fixed embedder
/// (in the pipeline, the frozen teacher's pooled embedding).
pub fn micro_fid(
    a: &[Image],
    b: &[Image],
    embed: impl Fn(&Image) -> Vec<f64>,
) -> Result<f64, MetricError> {
    for set in [a, b] {
        if set.len() < FID_MIN_SAMPLES {
            return Err(MetricError::TooFewSamples { need: FID_MIN_SAMPLES, got: set.len() });
        }
    }
    let ea: Vec<Vec<f64>> = a.iter().map(&embed).collect();
    let eb: Vec<Vec<f64>> = b.iter().map(&embed).collect();
    Ok(frechet_distance(&ea, &eb))
}
