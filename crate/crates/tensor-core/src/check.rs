//! Finite-difference gradient verification.
//!
//! Rebuilds the computation from scratch for every probe so that the
//! closure under test cannot leak state between evaluations.

use crate::error::TensorResult;
use crate::tensor::Tensor;

/// Central-difference step. At f64 this balances truncation against
/// round-off; relative errors land comfortably below `1e-6` for smooth
/// functions.
pub const GRAD_CHECK_H: f64 = 1e-5;

/// Default acceptance threshold for [`grad_check`].
pub const GRAD_CHECK_TOL: f64 = 1e-4;

/// Default denominator floor for the relative-error normalization.
pub const GRAD_CHECK_EPS: f64 = 1e-8;

/// Worst relative error found across all checked coordinates.
#[derive(Debug, Clone, Copy)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// (parameter index, flat coordinate) of the worst entry.
    pub worst: (usize, usize),
    pub coords_checked: usize,
}

impl GradReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

fn rel_err(a: f64, b: f64, eps: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(eps);
    (a - b).abs() / denom
}

/// [`grad_check_with`] at the default step and denominator floor,
/// appropriate for shallow graphs.
pub fn grad_check(
    params: &[Tensor<f64>],
    f: impl Fn(&[Tensor<f64>]) -> TensorResult<Tensor<f64>>,
) -> TensorResult<GradReport> {
    grad_check_with(params, GRAD_CHECK_H, GRAD_CHECK_EPS, f)
}

/// [`grad_check_with`] at the default step.
pub fn grad_check_eps(
    params: &[Tensor<f64>],
    eps: f64,
    f: impl Fn(&[Tensor<f64>]) -> TensorResult<Tensor<f64>>,
) -> TensorResult<GradReport> {
    grad_check_with(params, GRAD_CHECK_H, eps, f)
}

/// Compare reverse-mode gradients of `f` against central differences.
///
/// `params` are f64 leaf tensors; `f` must rebuild the full forward
/// pass from them and return a scalar loss. Every coordinate of every
/// parameter is probed. Returns the worst relative error, where each
/// comparison is normalized by `max(|analytic|, |numeric|, eps)`.
///
/// The two tuning knobs trade off the two error sources of the central
/// difference itself, neither of which says anything about the adjoint:
///
/// * truncation error scales as `|f'''| * h^2 / 6`, so a composition
///   with strong curvature along some coordinate wants a smaller `h`;
/// * round-off error scales as `|loss| * ulp / h`, about
///   `|loss| * 2e-11` at `h = 1e-6`, and is absorbed by the `eps`
///   denominator floor on coordinates whose true gradient is near zero.
///
/// Shallow graphs are fine with the defaults. Deep compositions with
/// O(1) losses typically need `h` around `1e-6` and `eps` around `1e-5`
/// to keep both noise terms an order of magnitude under a `1e-4`
/// acceptance threshold.
pub fn grad_check_with(
    params: &[Tensor<f64>],
    h: f64,
    eps: f64,
    f: impl Fn(&[Tensor<f64>]) -> TensorResult<Tensor<f64>>,
) -> TensorResult<GradReport> {
    for p in params {
        p.zero_grad();
    }
    let loss = f(params)?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();

    let mut report = GradReport { max_rel_err: 0.0, worst: (0, 0), coords_checked: 0 };
    for (pi, p) in params.iter().enumerate() {
        for ci in 0..p.numel() {
            let orig = p.data()[ci];
            p.poke(ci, orig + h);
            let up = f(params)?.item();
            p.poke(ci, orig - h);
            let down = f(params)?.item();
            p.poke(ci, orig);
            let numeric = (up - down) / (2.0 * h);
            let err = rel_err(analytic[pi][ci], numeric, eps);
            report.coords_checked += 1;
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = (pi, ci);
            }
        }
    }
    for p in params {
        p.zero_grad();
    }
    Ok(report)
}
