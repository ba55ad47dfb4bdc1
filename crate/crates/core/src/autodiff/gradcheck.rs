//! Central finite-difference oracle for tape gradients.

use crate::autodiff::{Error, ParameterSet, Result, Tape, Var};
use crate::scalar::Scalar;

/// Settings for [`check_gradients`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    /// Central-difference step.
    pub eps: f64,
    /// Denominator floor: entries whose analytic and numeric gradients are
    /// both below it are compared on an absolute scale.
    pub floor: f64,
    /// Check at most this many evenly spaced entries per parameter.
    pub max_entries: Option<usize>,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            floor: 1e-6,
            max_entries: None,
        }
    }
}

/// Worst disagreement found by [`check_gradients`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub entries_checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn sample_indices(n: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < n => (0..m).map(|i| i * n / m).collect(),
        _ => (0..n).collect(),
    }
}

/// Compares tape gradients of the scalar built by `f` against central
/// differences for every entry of every parameter in `params`.
///
/// `f` must load parameters through [`Tape::param`] and be deterministic.
/// Parameters that `f` never loads as trainable have an analytic gradient of
/// zero, so any dependence on them shows up as an error.
pub fn check_gradients<S, E, F>(f: F, params: &ParameterSet<S>, cfg: GradCheck) -> Result<GradCheckReport, E>
where
    S: Scalar,
    E: From<Error>,
    F: Fn(&mut Tape<S>, &ParameterSet<S>) -> Result<Var, E>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    let grads = tape.backward(loss)?.params();
    drop(tape);

    let eval = |set: &ParameterSet<S>| -> Result<f64, E> {
        let mut t = Tape::new();
        let out = f(&mut t, set)?;
        Ok(t.value(out).item().to_f64_lossy())
    };

    let mut report = GradCheckReport::default();
    let mut work = params.clone();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let base = params.get(&name)?.clone();
        for i in sample_indices(base.numel(), cfg.max_entries) {
            let x = base.data()[i];
            let step = S::of(cfg.eps);

            let mut plus = base.clone();
            plus.data_mut()[i] = x + step;
            work.set(&name, plus)?;
            let f_plus = eval(&work)?;

            let mut minus = base.clone();
            minus.data_mut()[i] = x - step;
            work.set(&name, minus)?;
            let f_minus = eval(&work)?;

            let numeric = (f_plus - f_minus) / (2.0 * cfg.eps);
            let analytic = grads
                .get(&name)
                .map_or(0.0, |g| g.data()[i].to_f64_lossy());
            let err = relative_error(analytic, numeric, cfg.floor);
            report.entries_checked += 1;
            if err > report.max_rel_error || report.entries_checked == 1 {
                report.max_rel_error = err;
                report.worst_param = name.clone();
                report.worst_index = i;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
        work.set(&name, base)?;
    }
    Ok(report)
}

/// Largest absolute analytic gradient that `f` assigns to any parameter of
/// `params`. Zero means none of them receives gradient.
pub fn max_gradient_magnitude<S, E, F>(f: F, params: &ParameterSet<S>) -> Result<f64, E>
where
    S: Scalar,
    E: From<Error>,
    F: Fn(&mut Tape<S>) -> Result<Var, E>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape)?;
    let grads = tape.backward(loss)?.params();
    Ok(params
        .names()
        .filter_map(|n| grads.get(n))
        .map(|g| g.max_abs().to_f64_lossy())
        .fold(0.0, f64::max))
}
