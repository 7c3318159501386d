//! Central finite-difference checks of tape gradients.
//!
//! The error of one element is `|analytic - numeric| / max(|analytic|, |numeric|, floor)`;
//! the report keeps the worst element. The floor keeps near-zero gradients from
//! turning rounding noise into huge relative errors.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tol: f64,
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { step: 1e-5, tol: 1e-6, floor: 1e-3 }
    }
}

impl GradCheckConfig {
    pub fn with_tol(tol: f64) -> Self {
        GradCheckConfig { tol, ..Self::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index of the worst element across all checked tensors.
    pub worst: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

/// Compares an analytic gradient with central differences of `value` around `x`.
///
/// Both closures are supplied by the caller, so this also works as an oracle
/// for gradients that do not come from a tape.
pub fn compare<S, V, A>(x: &Tensor<S>, cfg: GradCheckConfig, value: V, analytic: A) -> Result<GradCheckReport>
where
    S: Scalar,
    V: Fn(&Tensor<S>) -> Result<S>,
    A: FnOnce(&Tensor<S>) -> Result<Tensor<S>>,
{
    let grad = analytic(x)?;
    if grad.shape() != x.shape() {
        return Err(Error::Shape { op: "grad_check", lhs: x.shape().to_vec(), rhs: grad.shape().to_vec() });
    }
    let mut probe = x.clone();
    let mut report = empty_report(cfg.tol);
    for i in 0..x.len() {
        let numeric = central(&mut probe, i, cfg.step, &value)?;
        score(&mut report, i, grad.data()[i].as_f64(), numeric, cfg.floor);
    }
    Ok(report)
}

/// Checks `d f(x) / d x` where `f` builds a scalar on a fresh tape.
pub fn grad_check<S, F>(x: &Tensor<S>, cfg: GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&mut Tape<'_, S>, Var) -> Result<Var>,
{
    let empty = ParamStore::new();
    compare(
        x,
        cfg,
        |probe| {
            let mut tape = Tape::new(&empty);
            let v = tape.constant(probe.clone());
            let out = f(&mut tape, v)?;
            scalar_of(&tape, out)
        },
        |x| {
            let mut tape = Tape::new(&empty);
            let v = tape.leaf(x.clone(), true);
            let out = f(&mut tape, v)?;
            let grads = tape.backward(out)?;
            Ok(grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
        },
    )
}

/// Checks the gradient of a scalar loss with respect to every parameter in
/// `params` (or only `only`, when given).
pub fn grad_check_params<S, F>(
    params: &ParamStore<S>,
    only: Option<&[ParamId]>,
    cfg: GradCheckConfig,
    f: F,
) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&mut Tape<'_, S>) -> Result<Var>,
{
    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => params.ids().collect(),
    };
    let analytic = {
        let mut tape = Tape::new(params);
        let out = f(&mut tape)?;
        tape.backward(out)?
    };
    let mut probe = params.clone();
    let mut report = empty_report(cfg.tol);
    let mut offset = 0;
    for id in ids {
        let n = params.get(id).len();
        let zeros = Tensor::zeros(params.get(id).shape());
        let grad = analytic.param(id).unwrap_or(&zeros);
        for i in 0..n {
            let orig = probe.get(id).data()[i];
            let eval = |store: &ParamStore<S>| -> Result<f64> {
                let mut tape = Tape::new(store);
                let out = f(&mut tape)?;
                Ok(scalar_of(&tape, out)?.as_f64())
            };
            probe.get_mut(id).data_mut()[i] = orig + S::of(cfg.step);
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - S::of(cfg.step);
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * cfg.step);
            if !numeric.is_finite() {
                return Err(Error::NonFinite { what: "finite difference", at: format!("{}[{i}]", params.name(id)) });
            }
            score(&mut report, offset + i, grad.data()[i].as_f64(), numeric, cfg.floor);
        }
        offset += n;
    }
    Ok(report)
}

fn scalar_of<S: Scalar>(tape: &Tape<'_, S>, out: Var) -> Result<S> {
    let v = tape.value(out);
    let s = v.item().ok_or_else(|| Error::NonScalarLoss(v.shape().to_vec()))?;
    if !s.is_finite() {
        return Err(Error::NonFinite { what: "function value", at: format!("{s}") });
    }
    Ok(s)
}

fn central<S: Scalar, V: Fn(&Tensor<S>) -> Result<S>>(probe: &mut Tensor<S>, i: usize, h: f64, value: &V) -> Result<f64> {
    let orig = probe.data()[i];
    probe.data_mut()[i] = orig + S::of(h);
    let up = value(probe)?.as_f64();
    probe.data_mut()[i] = orig - S::of(h);
    let down = value(probe)?.as_f64();
    probe.data_mut()[i] = orig;
    let d = (up - down) / (2.0 * h);
    if !d.is_finite() {
        return Err(Error::NonFinite { what: "finite difference", at: format!("element {i}") });
    }
    Ok(d)
}

fn empty_report(tol: f64) -> GradCheckReport {
    GradCheckReport { max_rel_error: 0.0, worst: 0, analytic: 0.0, numeric: 0.0, checked: 0, tol }
}

fn score(report: &mut GradCheckReport, index: usize, analytic: f64, numeric: f64, floor: f64) {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    let err = (analytic - numeric).abs() / denom;
    report.checked += 1;
    if err > report.max_rel_error || !err.is_finite() {
        report.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
        report.worst = index;
        report.analytic = analytic;
        report.numeric = numeric;
    }
}
