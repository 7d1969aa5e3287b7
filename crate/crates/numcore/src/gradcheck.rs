//! Central-difference gradient verification.

use crate::error::NumResult;
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest per-coordinate relative error
    /// `|a − n| / max(1e-8, |a| + |n|)`.
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

/// Compares analytic gradients of `loss_fn` against central differences
/// `(f(θ+ε) − f(θ−ε)) / 2ε` for every coordinate of the parameters in `ids`.
///
/// `loss_fn` must be deterministic: it is re-run twice per coordinate.
pub fn finite_diff_check<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    eps: f64,
    mut loss_fn: F,
) -> NumResult<GradCheckReport>
where
    F: FnMut(&mut Tape, &ParamStore) -> NumResult<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store)?;
    tape.backward(loss, store)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| store.get(id).grad.data().to_vec())
        .collect();

    let mut eval = |store: &ParamStore| -> NumResult<f64> {
        let mut tape = Tape::new();
        let l = loss_fn(&mut tape, store)?;
        Ok(tape.scalar(l))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    for (k, &id) in ids.iter().enumerate() {
        for i in 0..store.get(id).value.len() {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + eps;
            let up = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig - eps;
            let down = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[k][i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            report.coordinates += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = store.get(id).name.clone();
                report.worst_index = i;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
