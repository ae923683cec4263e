//! Velocity fields `v(t, x)` on `[0, 1] × ℝᵈ`.
//!
//! Analytic fields live here: the Gaussian and quartic optimal-transport
//! displacement fields, rotationally perturbed (non-OT) controls and linear
//! fields with a constant Jacobian. Neural fields implement the same trait in
//! [`crate::autodiff`].

mod gaussian;
mod linear;
mod perturbed;
mod quartic;

pub use gaussian::{gaussian_ot_field, gaussian_strain_norm_sq, GaussianOtField, GaussianOtSpec};
pub use linear::LinearField;
pub use perturbed::{perturbed_field, PerturbedField, DEFAULT_GAMMA};
pub use quartic::{invert_displacement, quartic_ot_field, QuarticOtField, QuarticOtSpec};

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Velocity, spatial Jacobian and time partial at one point.
#[derive(Clone, Debug)]
pub struct LocalState {
    pub velocity: Vec<f64>,
    pub jacobian: Mat,
    pub time_partial: Vec<f64>,
}

pub trait VelocityField: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, t: f64, x: &[f64]) -> Result<Vec<f64>>;

    /// Spatial Jacobian `∇ₓv`, entry `(i, j) = ∂vᵢ/∂xⱼ`.
    fn jacobian(&self, t: f64, x: &[f64]) -> Result<Mat>;

    fn time_partial(&self, t: f64, x: &[f64]) -> Result<Vec<f64>>;

    /// Evaluates many points at a common time. Neural fields override this
    /// to run one batched forward pass.
    fn eval_batch(&self, t: f64, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        xs.iter().map(|x| self.eval(t, x)).collect()
    }

    fn local_batch(&self, t: f64, xs: &[Vec<f64>]) -> Result<Vec<LocalState>> {
        xs.iter()
            .map(|x| {
                Ok(LocalState {
                    velocity: self.eval(t, x)?,
                    jacobian: self.jacobian(t, x)?,
                    time_partial: self.time_partial(t, x)?,
                })
            })
            .collect()
    }

    /// Closed-form time-1 flow map, when one is known.
    fn exact_endpoint(&self, _x0: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// True for exact OT displacement-interpolation fields.
    fn is_optimal_transport(&self) -> bool {
        false
    }
}

impl<F: VelocityField + ?Sized> VelocityField for Box<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        (**self).eval(t, x)
    }
    fn jacobian(&self, t: f64, x: &[f64]) -> Result<Mat> {
        (**self).jacobian(t, x)
    }
    fn time_partial(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        (**self).time_partial(t, x)
    }
    fn eval_batch(&self, t: f64, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        (**self).eval_batch(t, xs)
    }
    fn local_batch(&self, t: f64, xs: &[Vec<f64>]) -> Result<Vec<LocalState>> {
        (**self).local_batch(t, xs)
    }
    fn exact_endpoint(&self, x0: &[f64]) -> Option<Vec<f64>> {
        (**self).exact_endpoint(x0)
    }
    fn is_optimal_transport(&self) -> bool {
        (**self).is_optimal_transport()
    }
}

/// `Dv/Dt = ∂ₜv + (∇ₓv) v`.
pub fn material_derivative(field: &dyn VelocityField, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    let v = field.eval(t, x)?;
    let jv = field.jacobian(t, x)?.matvec(&v)?;
    let dt = field.time_partial(t, x)?;
    Ok(dt.iter().zip(&jv).map(|(a, b)| a + b).collect())
}

pub(crate) fn check_dim(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() == expected {
        Ok(())
    } else {
        Err(Error::Dimension {
            expected,
            got: x.len(),
        })
    }
}

/// Applies the block rotation `J` that maps `(x₀, x₁) ↦ (−x₁, x₀)` on each
/// coordinate pair; a trailing odd coordinate is left at zero.
pub(crate) fn block_rotate(x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for p in 0..x.len() / 2 {
        out[2 * p] = -x[2 * p + 1];
        out[2 * p + 1] = x[2 * p];
    }
    out
}
