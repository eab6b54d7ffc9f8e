//! Central finite-difference verification of tape gradients.

use super::params::{Gradients, ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::Result;

/// Magnitudes below this are treated as this value when forming relative
/// errors, so coordinates with near-zero gradients are compared absolutely.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateError {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    pub worst: Option<CoordinateError>,
    /// Coordinates whose error reached `tol`, or whose function value was NaN.
    pub failures: Vec<CoordinateError>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.max_relative_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

fn evaluate<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let mut tape = Tape::new(store);
    let loss = f(&mut tape)?;
    Ok(tape.scalar(loss))
}

/// Checks the tape gradient of `f` against central differences with step `h`
/// for every coordinate of `params`.
pub fn grad_check<F>(store: &mut ParamStore, params: &[ParamId], h: f64, tol: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        tape.backward(loss)?
    };
    compare_with_finite_differences(store, params, &analytic, h, tol, f)
}

/// Compares a supplied gradient against central differences of `f`.
pub fn compare_with_finite_differences<F>(
    store: &mut ParamStore,
    params: &[ParamId],
    analytic: &Gradients,
    h: f64,
    tol: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>) -> Result<Var>,
{
    let mut report = GradCheckReport {
        checked: 0,
        max_relative_error: 0.0,
        worst: None,
        failures: Vec::new(),
        tolerance: tol,
    };
    for &id in params {
        let name = store.get(id).name().to_string();
        let n = store.value(id).len();
        for k in 0..n {
            let original = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = original + h;
            let plus = evaluate(store, &f);
            store.value_mut(id).data_mut()[k] = original - h;
            let minus = evaluate(store, &f);
            store.value_mut(id).data_mut()[k] = original;
            let (plus, minus) = (plus?, minus?);

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(id).map_or(0.0, |g| g[k]);
            let rel = if numeric.is_nan() || a.is_nan() {
                f64::NAN
            } else {
                relative_error(a, numeric)
            };
            let entry = CoordinateError {
                param: name.clone(),
                index: k,
                analytic: a,
                numeric,
                relative_error: rel,
            };
            report.checked += 1;
            if rel.is_nan() || rel >= tol {
                report.failures.push(entry.clone());
            }
            if rel.is_nan() || rel > report.max_relative_error {
                report.max_relative_error = if rel.is_nan() { f64::INFINITY } else { rel };
                report.worst = Some(entry);
            }
        }
    }
    Ok(report)
}
