//! Central finite-difference verification of analytic gradients.

use serde::Serialize;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Gradients smaller than this are compared on an absolute scale.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub elements: usize,
    pub max_relative_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_relative_error)
            .fold(0.0, f64::max)
    }

    /// Set when any parameter's error reaches the tolerance.
    pub fn flagged(&self) -> bool {
        !(self.max_relative_error() < self.tolerance)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

fn eval<F>(store: &ParamStore, build: &F) -> Result<f64>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::new(store);
    let loss = build(&mut g)?;
    if g.has_live_dropout() {
        return Err(Error::LiveDropout);
    }
    Ok(g.scalar(loss))
}

/// Compares the analytic gradient of the scalar built by `build` against
/// central differences with the given `step`, for every element of every
/// trainable parameter. The store's values are restored afterwards.
pub fn gradient_check<F>(
    store: &mut ParamStore,
    build: F,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let grads = {
        let mut g = Graph::new(store);
        let loss = build(&mut g)?;
        if g.has_live_dropout() {
            return Err(Error::LiveDropout);
        }
        g.backward(loss)?
    };

    let ids: Vec<_> = store.ids().filter(|&id| store.is_trainable(id)).collect();
    let mut report = Vec::with_capacity(ids.len());
    for id in ids {
        let len = store.value(id).len();
        let analytic = grads.dense(id, len);
        let mut max_rel = 0.0f64;
        let mut max_abs = 0.0f64;
        for (i, &a) in analytic.iter().enumerate() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + step;
            let plus = eval(store, &build);
            store.value_mut(id).data_mut()[i] = orig - step;
            let minus = eval(store, &build);
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus? - minus?) / (2.0 * step);
            max_rel = max_rel.max(relative_error(a, numeric));
            max_abs = max_abs.max((a - numeric).abs());
        }
        report.push(ParamCheck {
            name: store.param(id).name.clone(),
            elements: len,
            max_relative_error: max_rel,
            max_abs_error: max_abs,
        });
    }
    Ok(GradCheckReport {
        params: report,
        tolerance,
    })
}
