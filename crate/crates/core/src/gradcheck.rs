//! Central finite-difference verification of tape gradients.

use alloc::string::String;

use crate::params::ParameterStore;
use crate::tape::{Tape, Var};

/// Worst entry found by [`finite_diff_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Maximum over every unfrozen parameter entry of
/// `|analytic - central| / (|analytic| + 1e-8)`.
///
/// `loss_fn` must record a scalar on the tape it is given and be
/// deterministic; any randomness has to come from fixed seeds.
pub fn finite_diff_check<F>(store: &mut ParameterStore, epsilon: f64, loss_fn: F) -> f64
where
    F: FnMut(&mut Tape, &ParameterStore) -> Var,
{
    finite_diff_report(store, epsilon, loss_fn).max_rel_error
}

pub fn finite_diff_report<F>(store: &mut ParameterStore, epsilon: f64, mut loss_fn: F) -> GradCheckReport
where
    F: FnMut(&mut Tape, &ParameterStore) -> Var,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store);
    let grads = tape.backward(loss);
    store.accumulate_grads(&tape, &grads);
    drop(tape);

    let mut eval = |s: &ParameterStore| {
        let mut t = Tape::new();
        let l = loss_fn(&mut t, s);
        t.scalar(l)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for name in store.names() {
        if store.get(&name).is_some_and(|p| p.frozen) {
            continue;
        }
        let n = store.value(&name).len();
        for k in 0..n {
            let orig = store.value(&name).data()[k];
            store.get_mut(&name).unwrap().value.data_mut()[k] = orig + epsilon;
            let up = eval(store);
            store.get_mut(&name).unwrap().value.data_mut()[k] = orig - epsilon;
            let down = eval(store);
            store.get_mut(&name).unwrap().value.data_mut()[k] = orig;

            let numeric = (up - down) / (2.0 * epsilon);
            let analytic = store.get(&name).unwrap().grad.data()[k];
            let err = libm::fabs(analytic - numeric) / (libm::fabs(analytic) + 1e-8);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err.max(report.max_rel_error);
                report.worst_param.clone_from(&name);
                report.worst_index = k;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    store.zero_grad();
    report
}
