//! Finite-difference verification of analytic gradients.
//!
//! Every trainable scalar of a 64-bit [`ParamSet`] is nudged by ±h and the
//! central difference is compared against the gradient from
//! [`Graph::backward`]. A measurement whose perturbation changes the ReLU
//! sign pattern or a max-pool winner straddles a kink; it is skipped and
//! counted rather than folded into the error.

use super::graph::{Graph, NodeId};
use super::params::{ParamId, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// zero up to rounding are compared absolutely.
    pub denom_floor: f64,
    /// Check at most this many evenly spaced entries per parameter.
    pub max_checks_per_param: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-6,
            tolerance: 1e-5,
            denom_floor: 1e-3,
            max_checks_per_param: None,
        }
    }
}

impl GradCheckOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self {
            tolerance,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub skipped_kinks: usize,
    /// Smallest distance of any ReLU input from zero at the base point.
    pub kink_margin: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Relative error with a floored denominator.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

struct Evaluation {
    loss: f64,
    signature: u64,
}

fn evaluate<F>(params: &ParamSet<f64>, build: &mut F) -> Result<Evaluation>
where
    F: for<'p> FnMut(&mut Graph<'p, f64>) -> Result<NodeId>,
{
    let mut g = Graph::with_params(params);
    let out = build(&mut g)?;
    let loss = g.scalar(out)?;
    if !loss.is_finite() {
        return Err(Error::Numeric("loss is not finite".into()));
    }
    Ok(Evaluation {
        loss,
        signature: g.kink_signature(),
    })
}

fn sample_indices(numel: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(k) if k < numel => {
            let k = k.max(1);
            (0..k).map(|i| i * numel / k).collect()
        }
        _ => (0..numel).collect(),
    }
}

/// Compares analytic and central-difference gradients of the scalar built by
/// `build` with respect to every trainable parameter in `params`.
pub fn gradient_check<F>(
    params: &mut ParamSet<f64>,
    options: GradCheckOptions,
    mut build: F,
) -> Result<GradCheckReport>
where
    F: for<'p> FnMut(&mut Graph<'p, f64>) -> Result<NodeId>,
{
    let (analytic, base_sig, kink_margin) = {
        let mut g = Graph::with_params(&*params);
        let out = build(&mut g)?;
        let grads = g.backward(out)?;
        if !grads.all_finite() {
            return Err(Error::Numeric("analytic gradient is not finite".into()));
        }
        let analytic: Vec<Vec<f64>> = params
            .ids()
            .map(|id| grads.param_grad(id, params.value(id).numel()))
            .collect();
        (analytic, g.kink_signature(), g.kink_margin())
    };

    let h = options.step;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped_kinks: 0,
        kink_margin,
        tolerance: options.tolerance,
        passed: true,
    };

    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        if !params.get(id).requires_grad {
            continue;
        }
        let numel = params.value(id).numel();
        for i in sample_indices(numel, options.max_checks_per_param) {
            let orig = params.value(id).data()[i];
            params.get_mut(id).value.data_mut()[i] = orig + h;
            let plus = evaluate(params, &mut build);
            params.get_mut(id).value.data_mut()[i] = orig - h;
            let minus = evaluate(params, &mut build);
            params.get_mut(id).value.data_mut()[i] = orig;
            let (plus, minus) = (plus?, minus?);

            if plus.signature != base_sig || minus.signature != base_sig {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * h);
            let err = relative_error(analytic[id.index()][i], numeric, options.denom_floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((params.get(id).name.clone(), i));
                }
            }
        }
    }
    report.passed = report.max_rel_error < options.tolerance;
    Ok(report)
}
