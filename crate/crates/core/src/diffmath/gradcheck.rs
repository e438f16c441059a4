use alloc::vec::Vec;

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{NodeId, Tape};
use crate::error::{Error, Result};

/// Magnitude below which both gradients are compared by absolute error.
pub const ABS_THRESHOLD: f64 = 1e-8;

/// Comparison of the tape gradient against a central finite difference for one scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSample {
    pub param: ParamId,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_error: f64,
    pub samples: Vec<GradSample>,
}

fn evaluate<F>(loss: &mut F, params: &ParamStore) -> Result<f64>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let node = loss(params, &mut tape)?;
    let v = tape.value(node).item();
    if !v.is_finite() {
        return Err(Error::Numeric("grad_check loss"));
    }
    Ok(v)
}

/// Relative error, falling back to absolute error when both magnitudes are tiny.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    if scale < ABS_THRESHOLD {
        diff
    } else {
        diff / scale
    }
}

/// Compares tape gradients with `(L(θ+h) − L(θ−h)) / 2h` on `samples`
/// randomly chosen scalars of `params`.
///
/// Each sample first picks an entry uniformly (so small groups such as biases
/// are exercised), then a scalar inside it. Gradients already stored in
/// `params` are cleared.
pub fn grad_check<F, R>(params: &mut ParamStore, mut loss: F, step: f64, samples: usize, rng: &mut R) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore, &mut Tape) -> Result<NodeId>,
    R: Rng + ?Sized,
{
    if !(step > 0.0) {
        return Err(Error::Config(alloc::format!("finite-difference step must be positive, got {step}")));
    }
    params.zero_grads();
    let mut tape = Tape::new();
    let node = loss(params, &mut tape)?;
    tape.backward(node, params)?;

    let ids: Vec<ParamId> = params.ids().collect();
    if ids.is_empty() {
        return Err(Error::Usage("grad_check on an empty parameter store"));
    }
    let mut report = GradCheckReport {
        max_error: 0.0,
        samples: Vec::with_capacity(samples),
    };
    for _ in 0..samples {
        let id = ids[rng.random_range(0..ids.len())];
        let index = rng.random_range(0..params.values(id).len());
        let analytic = params.grad(id)[index];
        let original = params.values(id)[index];
        params.values_mut(id)[index] = original + step;
        let plus = evaluate(&mut loss, params);
        params.values_mut(id)[index] = original - step;
        let minus = evaluate(&mut loss, params);
        params.values_mut(id)[index] = original;
        let numeric = (plus? - minus?) / (2.0 * step);
        let error = relative_error(analytic, numeric);
        report.max_error = report.max_error.max(error);
        report.samples.push(GradSample {
            param: id,
            index,
            analytic,
            numeric,
            error,
        });
    }
    Ok(report)
}
