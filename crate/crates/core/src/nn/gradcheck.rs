//! Central finite-difference checks of analytic vector-Jacobian products.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A function of several 64-bit tensors together with its VJP.
pub trait DifferentiableOp {
    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>>;

    /// Gradients of `sum(upstream * forward(inputs))` with respect to every
    /// input, in input order.
    fn vjp(&self, inputs: &[Tensor<f64>], upstream: &Tensor<f64>) -> Result<Vec<Tensor<f64>>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Relative step; the perturbation is `step * (1 + |value|)`.
    pub step: f64,
    pub tolerance: f64,
    /// Check at most this many coordinates per input, chosen with `seed`.
    pub max_coords_per_input: Option<usize>,
    pub seed: u64,
}

impl GradCheckConfig {
    pub fn new(tolerance: f64) -> Self {
        Self {
            step: 1e-4,
            tolerance,
            max_coords_per_input: None,
            seed: 0,
        }
    }

    pub fn sampled(mut self, max: usize, seed: u64) -> Self {
        self.max_coords_per_input = Some(max);
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub passed: bool,
    pub coords_checked: usize,
    /// `(input index, flat element index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
}

/// `|a - n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn objective(
    op: &dyn DifferentiableOp,
    inputs: &[Tensor<f64>],
    upstream: &Tensor<f64>,
) -> Result<f64> {
    op.forward(inputs)?.dot(upstream)
}

fn pick_coords(len: usize, max: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match max {
        Some(m) if m < len => {
            // partial Fisher-Yates
            let mut idx: Vec<usize> = (0..len).collect();
            for i in 0..m {
                let j = i + (rng.next_u64() % (len - i) as u64) as usize;
                idx.swap(i, j);
            }
            idx.truncate(m);
            idx.sort_unstable();
            idx
        }
        _ => (0..len).collect(),
    }
}

/// Compares `op.vjp` against central differences of `sum(upstream * op(x))`.
///
/// Failures are reported through [`GradCheckReport::passed`]; an `Err` means
/// the op could not be evaluated at all.
pub fn finite_diff_check(
    op: &dyn DifferentiableOp,
    inputs: &[Tensor<f64>],
    upstream: &Tensor<f64>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let analytic = op.vjp(inputs, upstream)?;
    if analytic.len() != inputs.len() {
        return Err(Error::shape(format!(
            "vjp returned {} gradients for {} inputs",
            analytic.len(),
            inputs.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        passed: true,
        coords_checked: 0,
        worst: None,
    };
    for (k, grad) in analytic.iter().enumerate() {
        inputs[k].expect_same_shape(grad)?;
        for i in pick_coords(inputs[k].len(), cfg.max_coords_per_input, &mut rng) {
            let v = inputs[k].data()[i];
            let h = cfg.step * (1.0 + v.abs());
            work[k].data_mut()[i] = v + h;
            let plus = objective(op, &work, upstream)?;
            work[k].data_mut()[i] = v - h;
            let minus = objective(op, &work, upstream)?;
            work[k].data_mut()[i] = v;
            let numeric = (plus - minus) / ((v + h) - (v - h));
            let err = relative_error(grad.data()[i], numeric);
            report.coords_checked += 1;
            if err.is_nan() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((k, i));
            }
        }
    }
    report.passed = report.max_rel_error <= cfg.tolerance;
    Ok(report)
}
