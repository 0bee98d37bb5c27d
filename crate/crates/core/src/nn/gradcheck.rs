//! Central finite-difference checks of analytic gradients (f64 only).

use super::params::{Gradients, ParameterStore};

/// Denominator floor, per unit of loss magnitude, so that gradients that are
/// zero up to round-off do not produce meaningless relative errors. A central
/// difference carries round-off of about `ε·|L| / h`, which is `1e-10·|L|` at
/// `h = 1e-5`; below `1e-6·|L|` a gradient cannot be resolved to `1e-4`.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }
}

impl Default for GradCheckReport {
    fn default() -> Self {
        GradCheckReport {
            checked: 0,
            max_rel_err: 0.0,
            worst: None,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, loss_scale: f64) -> f64 {
    let floor = REL_ERR_FLOOR * loss_scale.abs().max(1.0);
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against `(f(p + h) − f(p − h)) / 2h` for every scalar
/// parameter in `params`.
pub fn check_params(
    params: &ParameterStore<f64>,
    analytic: &Gradients<f64>,
    h: f64,
    mut loss: impl FnMut(&ParameterStore<f64>) -> f64,
) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    let scale = loss(params);
    let mut probe = params.clone();
    for id in params.ids() {
        for i in 0..params.get(id).as_slice().len() {
            let orig = params.get(id).as_slice()[i];
            probe.get_mut(id).as_mut_slice()[i] = orig + h;
            let up = loss(&probe);
            probe.get_mut(id).as_mut_slice()[i] = orig - h;
            let down = loss(&probe);
            probe.get_mut(id).as_mut_slice()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(analytic.get(id).as_slice()[i], numeric, scale);
            report.checked += 1;
            if err >= report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((params.name(id).to_string(), i));
            }
        }
    }
    report
}

/// Same as [`check_params`] for a loss over a flat input vector.
pub fn check_inputs(
    input: &[f64],
    analytic: &[f64],
    h: f64,
    mut loss: impl FnMut(&[f64]) -> f64,
) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    let scale = loss(input);
    let mut probe = input.to_vec();
    for i in 0..input.len() {
        probe[i] = input[i] + h;
        let up = loss(&probe);
        probe[i] = input[i] - h;
        let down = loss(&probe);
        probe[i] = input[i];
        let err = relative_error(analytic[i], (up - down) / (2.0 * h), scale);
        report.checked += 1;
        if err >= report.max_rel_err {
            report.max_rel_err = err;
            report.worst = Some(("input".to_string(), i));
        }
    }
    report
}
