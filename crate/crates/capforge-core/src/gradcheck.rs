//! Central finite-difference verification of autograd gradients.
//!
//! The harness perturbs each checked coordinate by +/- `step`, re-evaluates
//! the forward closure, and compares `(f(x+h) - f(x-h)) / 2h` against the
//! gradient produced by `backward()`. It never looks at the backward
//! implementation, so it is an independent oracle for it. Instantiate at
//! `f64` for the double-precision shadow evaluation of a single-precision
//! model (lift the `f32` values and run the same generic forward code).

use crate::scalar::Scalar;
use crate::tensor::{no_grad, Tensor, TensorError};

/// Comparison floor so near-zero gradient pairs are judged on an absolute
/// scale instead of exploding the relative error.
const DENOM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub coords_checked: usize,
    /// Fraction of coordinates with relative error below the fine tolerance.
    pub frac_fine: f64,
    pub max_rel_err: f64,
    pub fine_tol: f64,
    pub max_tol: f64,
    pub frac_required: f64,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.frac_fine >= self.frac_required && self.max_rel_err < self.max_tol
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} coords, {:.2}% within {:.0e} (need {:.0}%), max rel err {:.3e} (limit {:.0e})",
            self.coords_checked,
            self.frac_fine * 100.0,
            self.fine_tol,
            self.frac_required * 100.0,
            self.max_rel_err,
            self.max_tol
        )
    }
}

/// Checks autograd gradients of `loss_fn` with respect to every coordinate of
/// `targets` against central finite differences of step `step`.
///
/// `loss_fn` must be a deterministic function of the targets' current data
/// (re-reading them on every call) and return a scalar.
pub fn check_gradients<F: Scalar>(
    loss_fn: impl Fn() -> Result<Tensor<F>, TensorError>,
    targets: &[Tensor<F>],
    step: f64,
    fine_tol: f64,
    max_tol: f64,
    frac_required: f64,
) -> Result<GradCheckReport, TensorError> {
    for t in targets {
        t.zero_grad();
    }
    let loss = loss_fn()?;
    loss.backward()?;
    let analytic: Vec<Vec<F>> = targets
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![F::zero(); t.len()]))
        .collect();

    let h = F::from_f64(step);
    let mut checked = 0usize;
    let mut fine = 0usize;
    let mut max_rel: f64 = 0.0;
    for (t, grads) in targets.iter().zip(analytic.iter()) {
        for i in 0..t.len() {
            let original = t.with_data(|d| d[i]);
            t.update_data(|d| d[i] = original + h);
            let plus = no_grad(|| loss_fn())?.item().as_f64();
            t.update_data(|d| d[i] = original - h);
            let minus = no_grad(|| loss_fn())?.item().as_f64();
            t.update_data(|d| d[i] = original);
            let fd = (plus - minus) / (2.0 * step);
            let ad = grads[i].as_f64();
            let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(DENOM_FLOOR);
            checked += 1;
            if rel < fine_tol {
                fine += 1;
            }
            max_rel = max_rel.max(rel);
        }
    }
    Ok(GradCheckReport {
        coords_checked: checked,
        frac_fine: if checked == 0 { 1.0 } else { fine as f64 / checked as f64 },
        max_rel_err: max_rel,
        fine_tol,
        max_tol,
        frac_required,
    })
}

/// Spec tolerances for the gradient suite: step 1e-4, fine tolerance 1e-4 on
/// at least 95% of coordinates, hard cap 1e-3.
pub fn check_gradients_default<F: Scalar>(
    loss_fn: impl Fn() -> Result<Tensor<F>, TensorError>,
    targets: &[Tensor<F>],
) -> Result<GradCheckReport, TensorError> {
    check_gradients(loss_fn, targets, 1e-4, 1e-4, 1e-3, 0.95)
}
