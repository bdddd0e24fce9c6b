//! Central finite-difference gradient checking.

use crate::param::Parameterized;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Worst offender: parameter name, flat index, analytic, numeric.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error <= tolerance
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare analytic gradients against central differences for every
/// trainable scalar of `model`.
///
/// `eval(model, with_backward)` must return the scalar loss; when
/// `with_backward` is true it must also leave fresh gradients in the model.
/// The function must be deterministic (no active dropout).
pub fn check_gradients<M, F>(model: &mut M, mut eval: F, eps: f64, floor: f64) -> GradCheckReport
where
    M: Parameterized<f64>,
    F: FnMut(&mut M, bool) -> f64,
{
    model.zero_grad();
    eval(model, true);
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    model.visit(&mut |p| {
        if p.is_trainable() {
            analytic.push((p.name.clone(), p.grad.data().to_vec()));
        }
    });

    let mut report = GradCheckReport { checked: 0, max_rel_error: 0.0, worst: None };
    for (param_idx, (name, grads)) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let original = perturb(model, param_idx, i, None);
            perturb(model, param_idx, i, Some(original + eps));
            let plus = eval(model, false);
            perturb(model, param_idx, i, Some(original - eps));
            let minus = eval(model, false);
            perturb(model, param_idx, i, Some(original));
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(a, numeric, floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i, a, numeric));
            }
        }
    }
    report
}

/// Set (or just read) one scalar of the `param_idx`-th trainable parameter;
/// returns the previous value.
fn perturb<M: Parameterized<f64>>(model: &mut M, param_idx: usize, i: usize, value: Option<f64>) -> f64 {
    let mut seen = 0;
    let mut old = 0.0;
    model.visit_mut(&mut |p| {
        if !p.is_trainable() {
            return;
        }
        if seen == param_idx {
            old = p.value.data()[i];
            if let Some(v) = value {
                p.value.data_mut()[i] = v;
            }
        }
        seen += 1;
    });
    old
}
