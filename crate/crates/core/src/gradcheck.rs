//! Central finite-difference gradient checking at 64-bit precision.

use crate::error::Result;
use crate::tensor::Tensor;

/// Denominator floor of [`relative_error`]: below this magnitude both values are
/// treated as "zero" and the comparison degrades to an absolute one.
pub const REL_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, REL_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(param index, flat element index)` of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Compares `analytic` against central differences of `f` around `params`.
///
/// At most `max_per_param` entries of each tensor are probed, spread evenly
/// over the tensor (all entries when `None`).
pub fn check_gradients(
    params: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    step: f64,
    max_per_param: Option<usize>,
    mut f: impl FnMut(&[Tensor<f64>]) -> Result<f64>,
) -> Result<GradCheckReport> {
    assert_eq!(params.len(), analytic.len(), "one analytic gradient per parameter");
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for (p, grad) in analytic.iter().enumerate() {
        assert_eq!(grad.shape(), params[p].shape(), "gradient shape for parameter {p}");
        let len = params[p].len();
        let stride = match max_per_param {
            Some(m) if m > 0 && len > m => len.div_ceil(m),
            _ => 1,
        };
        for i in (0..len).step_by(stride) {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + step;
            let up = f(&work)?;
            work[p].data_mut()[i] = orig - step;
            let down = f(&work)?;
            work[p].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = grad.data()[i];
            let err = relative_error(a, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.checked == 1 {
                report.max_rel_error = err;
                report.worst = (p, i);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
