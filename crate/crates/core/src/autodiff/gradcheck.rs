//! Reverse-mode gradients against central finite differences.

use rand::seq::index::sample;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Base finite-difference step; coordinate `i` uses `STEP · max(1, |θᵢ|)`.
pub const GRADCHECK_STEP: f64 = 1e-4;
pub const GRADCHECK_COORDS: usize = 64;
/// Floor of the relative-deviation denominator.
const REL_FLOOR: f64 = 1e-6;

/// A scalar function of a flat parameter vector with a reverse-mode
/// gradient.
pub trait Objective {
    fn value(&self, params: &[f64]) -> Result<f64>;
    fn value_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl<V, G> Objective for (V, G)
where
    V: Fn(&[f64]) -> Result<f64>,
    G: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn value(&self, params: &[f64]) -> Result<f64> {
        (self.0)(params)
    }
    fn value_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        (self.1)(params)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CoordinateCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_deviation: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub loss: f64,
    pub tol: f64,
    pub max_rel_deviation: f64,
    pub pass: bool,
    pub coordinates: Vec<CoordinateCheck>,
}

/// Compares the gradient on a random subsample of at most 64 coordinates.
/// The subsample is drawn from the `gradcheck` stream of `seed`.
pub fn gradcheck(
    params: &[f64],
    objective: &impl Objective,
    tol: f64,
    seed: u64,
) -> Result<GradcheckReport> {
    let (loss, grad) = objective.value_and_grad(params)?;
    if grad.len() != params.len() {
        return Err(Error::Dimension {
            expected: params.len(),
            got: grad.len(),
        });
    }
    let mut rng = stream_rng(seed, "gradcheck", 0);
    let mut indices = sample(&mut rng, params.len(), GRADCHECK_COORDS.min(params.len())).into_vec();
    indices.sort_unstable();
    let mut coordinates = Vec::with_capacity(indices.len());
    let mut work = params.to_vec();
    for index in indices {
        let h = GRADCHECK_STEP * params[index].abs().max(1.0);
        work[index] = params[index] + h;
        let plus = objective.value(&work)?;
        work[index] = params[index] - h;
        let minus = objective.value(&work)?;
        work[index] = params[index];
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grad[index];
        let rel_deviation =
            (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        coordinates.push(CoordinateCheck {
            index,
            analytic,
            numeric,
            rel_deviation,
        });
    }
    let max_rel_deviation = coordinates
        .iter()
        .map(|c| c.rel_deviation)
        .fold(0.0, f64::max);
    Ok(GradcheckReport {
        loss,
        tol,
        max_rel_deviation,
        pass: max_rel_deviation <= tol && max_rel_deviation.is_finite(),
        coordinates,
    })
}
