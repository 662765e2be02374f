//! Finite-difference gradient verification.
//!
//! The harness rebuilds the scalar loss from a closure, runs one backward
//! pass for the analytic gradients, then probes every parameter element
//! with central differences and reports the worst relative error. Checks
//! run in f64; step and tolerance defaults suit that precision.

use crate::error::Result;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_TOL: f64 = 1e-4;

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub name: String,
    /// Worst relative error over every checked element.
    pub max_rel_err: f64,
    /// Number of scalar elements compared.
    pub checked: usize,
    pub tol: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < self.tol
    }
}

impl std::fmt::Display for GradReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {} ({} elements, max rel err {:.3e}, tol {:.1e})",
            self.name,
            if self.passed() { "ok" } else { "FAILED" },
            self.checked,
            self.max_rel_err,
            self.tol
        )
    }
}

/// Relative error with an absolute floor so tiny gradients compare sanely.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

/// Check the analytic gradient of `f` with respect to every tensor in
/// `params` by central differences with step `h`.
///
/// `f` must rebuild the loss graph from the current parameter values on
/// every call; any internal randomness must replay identically per call.
pub fn check<F>(name: &str, params: &[&Tensor<f64>], f: F, h: f64, tol: f64) -> Result<GradReport>
where
    F: Fn() -> Result<Tensor<f64>>,
{
    for p in params {
        p.zero_grad();
    }
    let loss = f()?;
    loss.backward()?;

    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for p in params {
        let analytic = p
            .grad()
            .unwrap_or_else(|| vec![0.0; p.numel()]);
        for i in 0..p.numel() {
            // Save and restore exactly; repeated += h would drift.
            let orig = p.get(i);
            p.update_data(|d| d[i] = orig + h);
            let up = f()?.item();
            p.update_data(|d| d[i] = orig - h);
            let down = f()?.item();
            p.update_data(|d| d[i] = orig);
            let numeric = (up - down) / (2.0 * h);
            let e = rel_err(analytic[i], numeric);
            if e > max_rel || !e.is_finite() {
                max_rel = if e.is_finite() { e } else { f64::INFINITY };
            }
            checked += 1;
        }
    }
    Ok(GradReport {
        name: name.to_string(),
        max_rel_err: max_rel,
        checked,
        tol,
    })
}
