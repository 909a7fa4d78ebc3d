//! Central finite-difference check of tape gradients.

use super::params::{BoundParams, ParamSet};
use super::tape::{Tape, Var};
use crate::error::Result;

/// Denominator floor of the per-coordinate relative error, so coordinates
/// whose true gradient is (numerically) zero are judged on absolute error.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max_k |analytic_k - numeric_k| / max(|analytic_k|, |numeric_k|, RELATIVE_FLOOR)`
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares `d loss / d params` from the tape against central differences
/// with perturbation `step`.
///
/// `loss` must build a scalar from the bound parameters; it is re-run on a
/// fresh tape for every perturbation.
pub fn check_gradients<F>(params: &ParamSet, step: f64, loss: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &BoundParams) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = loss(&mut tape, &bound)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<f64> = params
        .collect_grads(&bound, &grads)
        .into_iter()
        .flat_map(|t| t.into_data())
        .collect();

    let eval = |flat: &[f64]| -> Result<f64> {
        let mut p = params.clone();
        p.set_flat(flat)?;
        let mut tape = Tape::new();
        let bound = p.bind_frozen(&mut tape);
        let out = loss(&mut tape, &bound)?;
        tape.item(out)
    };

    let base = params.flatten();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: 0,
        checked: base.len(),
    };
    let mut probe = base.clone();
    for k in 0..base.len() {
        probe[k] = base[k] + step;
        let up = eval(&probe)?;
        probe[k] = base[k] - step;
        let down = eval(&probe)?;
        probe[k] = base[k];
        let numeric = (up - down) / (2.0 * step);
        let abs = (analytic[k] - numeric).abs();
        let rel = abs / analytic[k].abs().max(numeric.abs()).max(RELATIVE_FLOOR);
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = k;
        }
    }
    Ok(report)
}
