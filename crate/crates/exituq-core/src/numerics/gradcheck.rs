//! Finite-difference gradient verification.
//!
//! Central differences with step `h` approximate `∂f/∂x_i` to `O(h²)`; with
//! `h = 1e-5` the truncation error sits far below the `1e-4` relative
//! tolerance used by the layer and loss checks.

use super::Tensor;

/// Central-difference gradient of a scalar-valued function at `x`.
///
/// `f` must be a pure function of its input — it is called `2 · numel` times
/// with perturbed copies.
pub fn numerical_gradient(f: &mut dyn FnMut(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let original = probe.data()[i];
        probe.data_mut()[i] = original + h;
        let plus = f(&probe);
        probe.data_mut()[i] = original - h;
        let minus = f(&probe);
        probe.data_mut()[i] = original;
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Outcome of comparing an analytic gradient against finite differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error over all entries.
    pub max_rel_error: f64,
    /// Flat index where the largest error occurred.
    pub worst_index: usize,
    /// Analytic and numerical values at that index.
    pub analytic: f64,
    pub numerical: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Compares `analytic` to the central-difference gradient of `f` at `x`.
///
/// The per-entry relative error is `|a − n| / max(|a| + |n|, 1e-8)`, which
/// stays meaningful when an entry is exactly zero.
pub fn check_gradient(
    f: &mut dyn FnMut(&Tensor) -> f64,
    x: &Tensor,
    analytic: &Tensor,
    h: f64,
) -> GradCheckReport {
    assert_eq!(x.shape(), analytic.shape(), "gradient shape mismatch");
    let numerical = numerical_gradient(f, x, h);
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_index: 0, analytic: 0.0, numerical: 0.0 };
    for i in 0..x.numel() {
        let a = analytic.data()[i];
        let n = numerical.data()[i];
        let rel = (a - n).abs() / (a.abs() + n.abs()).max(1e-8);
        if rel >= report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic = a;
            report.numerical = n;
        }
    }
    report
}
