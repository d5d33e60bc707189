//! Central-difference gradient checks.

use std::collections::BTreeMap;

use super::params::{ParamStore, Session};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Max over coordinates of `|analytic - central difference| / max(1, |central difference|)`
/// for a scalar function of one tensor.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Var,
{
    let eval = |point: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(point.clone());
        let out = f(&mut tape, v);
        finite(tape.value(out).item(), "objective")
    };

    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(&mut tape, xv);
    finite(tape.value(out).item(), "objective")?;
    let grads = tape.backward(out);
    let analytic = grads
        .get(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.rows(), x.cols()));

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Worst relative error for one named parameter.
#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
}

/// Gradient check over every parameter a session-based objective binds.
///
/// `f` must be a pure function of the parameter values (any sampling inside
/// it has to be re-seeded on every call).
pub fn grad_check_params<F>(f: F, params: &ParamStore, eps: f64) -> Result<Vec<ParamCheck>>
where
    F: Fn(&mut Session) -> Var,
{
    let eval = |p: &ParamStore| -> Result<f64> {
        let mut s = Session::new(p);
        let out = f(&mut s);
        finite(s.value(out).item(), "objective")
    };

    let mut s = Session::new(params);
    let out = f(&mut s);
    finite(s.value(out).item(), "objective")?;
    let analytic: BTreeMap<String, Tensor> = s.gradients(out);

    let mut probe = params.clone();
    let mut report = Vec::with_capacity(analytic.len());
    for (name, g) in &analytic {
        let mut worst = 0.0f64;
        for i in 0..g.len() {
            let orig = probe.get(name).expect("bound parameter").data()[i];
            probe.get_mut(name).unwrap().data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe.get_mut(name).unwrap().data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(g.data()[i], numeric));
        }
        report.push(ParamCheck {
            name: name.clone(),
            max_rel_error: worst,
        });
    }
    Ok(report)
}

/// Largest error in a [`grad_check_params`] report.
pub fn worst(report: &[ParamCheck]) -> f64 {
    report.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
}
