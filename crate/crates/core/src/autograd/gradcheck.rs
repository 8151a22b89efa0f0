//! Central-difference verification of analytic gradients.
//!
//! Each checked coordinate is compared as
//! `|analytic − numeric| / max(1, |analytic|, |numeric|)` with
//! `numeric = (f(x+h) − f(x−h)) / 2h`.
//!
//! Piecewise-linear operations (relu, max-pool) make `f` non-differentiable
//! on kinks. A coordinate is excluded when perturbing it by `±h` changes the
//! activation pattern of the network, i.e. when the difference quotient
//! straddles a kink; everywhere else `f` is smooth on `[x−h, x+h]`.
//!
//! Tensors passed through [`Graph::detach`] on the base evaluation are
//! replayed unchanged on the perturbed ones, so the numeric derivative has
//! the same stop-gradient semantics as the analytic one.

use crate::autograd::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::ModelParameters;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because `±h` crosses a relu or max-pool kink.
    pub excluded: usize,
}

impl GradCheckReport {
    fn new() -> Self {
        GradCheckReport {
            max_rel_error: 0.0,
            checked: 0,
            excluded: 0,
        }
    }

    fn compare(&mut self, analytic: f64, numeric: f64) {
        let denom = 1f64.max(analytic.abs()).max(numeric.abs());
        self.max_rel_error = self.max_rel_error.max((analytic - numeric).abs() / denom);
        self.checked += 1;
    }
}

fn scalar_of(v: &Var) -> Result<f64> {
    v.value().item()
}

/// Checks every coordinate of `point`.
pub fn finite_difference_check<F>(f: F, point: &Tensor, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..point.len()).collect();
    finite_difference_check_at(f, point, h, &coords)
}

/// Checks the listed flat coordinates of `point`.
pub fn finite_difference_check_at<F>(f: F, point: &Tensor, h: f64, coords: &[usize]) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &Var) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::Argument(format!("finite-difference step {h} must be positive")));
    }
    let mut g = Graph::new();
    g.track_kinks();
    g.capture_detached();
    let x = g.watch(point.clone());
    let y = f(&mut g, &x)?;
    let base = g.kink_signature();
    let held = g.take_detached();
    let grads = g.backward(&y)?;
    let analytic = grads.wrt(&x);

    let eval = |t: Tensor| -> Result<(f64, Option<u64>)> {
        let mut g = Graph::inference();
        g.track_kinks();
        g.replay_detached(held.clone());
        let x = g.constant(t);
        let y = f(&mut g, &x)?;
        Ok((scalar_of(&y)?, g.kink_signature()))
    };

    let mut report = GradCheckReport::new();
    for &i in coords {
        if i >= point.len() {
            return Err(Error::Argument(format!("coordinate {i} outside {}", point.shape())));
        }
        let mut plus = point.clone();
        plus.data_mut()[i] += h;
        let mut minus = point.clone();
        minus.data_mut()[i] -= h;
        let (fp, sp) = eval(plus)?;
        let (fm, sm) = eval(minus)?;
        if sp != base || sm != base {
            report.excluded += 1;
            continue;
        }
        report.compare(analytic.data()[i], (fp - fm) / (2.0 * h));
    }
    Ok(report)
}

/// Checks gradients of `f` with respect to individual parameter entries
/// `(name, flat index)`.
pub fn check_parameters<F>(
    f: F,
    params: &ModelParameters,
    coords: &[(String, usize)],
    h: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ModelParameters) -> Result<Var>,
{
    let mut g = Graph::new();
    g.track_kinks();
    g.capture_detached();
    let y = f(&mut g, params)?;
    let base = g.kink_signature();
    let held = g.take_detached();
    let grads = g.backward(&y)?;

    let eval = |p: &ModelParameters| -> Result<(f64, Option<u64>)> {
        let mut g = Graph::inference();
        g.track_kinks();
        g.replay_detached(held.clone());
        let y = f(&mut g, p)?;
        Ok((scalar_of(&y)?, g.kink_signature()))
    };

    let mut report = GradCheckReport::new();
    for (name, i) in coords {
        let analytic = grads.param(name).map_or(0.0, |t| t.data()[*i]);
        let mut plus = params.clone();
        plus.perturb(name, *i, h)?;
        let mut minus = params.clone();
        minus.perturb(name, *i, -h)?;
        let (fp, sp) = eval(&plus)?;
        let (fm, sm) = eval(&minus)?;
        if sp != base || sm != base {
            report.excluded += 1;
            continue;
        }
        report.compare(analytic, (fp - fm) / (2.0 * h));
    }
    Ok(report)
}
