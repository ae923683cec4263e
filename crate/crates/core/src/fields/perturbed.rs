use std::f64::consts::PI;

use super::{block_rotate, check_dim, LocalState, VelocityField};
use crate::error::{Error, Result};
use crate::linalg::Mat;

pub const DEFAULT_GAMMA: f64 = 0.5;

/// Non-OT control: `v(t, x) = v_base(t, x) + γ sin(2πt) J x`, where `J`
/// rotates each coordinate pair `(0,1), (2,3), …` by a quarter turn.
///
/// The schedule vanishes at `t = 0` and `t = 1`.
pub struct PerturbedField {
    base: Box<dyn VelocityField>,
    gamma: f64,
}

pub fn perturbed_field(base: Box<dyn VelocityField>, gamma: f64) -> Result<PerturbedField> {
    if base.dim() < 2 {
        return Err(Error::Dimension {
            expected: 2,
            got: base.dim(),
        });
    }
    if !gamma.is_finite() {
        return Err(Error::NonFinite("perturbation amplitude".into()));
    }
    Ok(PerturbedField { base, gamma })
}

impl PerturbedField {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn base(&self) -> &dyn VelocityField {
        self.base.as_ref()
    }

    fn amplitude(&self, t: f64) -> f64 {
        self.gamma * (2.0 * PI * t).sin()
    }

    fn amplitude_rate(&self, t: f64) -> f64 {
        self.gamma * 2.0 * PI * (2.0 * PI * t).cos()
    }

    fn rotation_matrix(&self) -> Mat {
        let d = self.dim();
        let mut j = Mat::zeros(d, d);
        for p in 0..d / 2 {
            j[(2 * p, 2 * p + 1)] = -1.0;
            j[(2 * p + 1, 2 * p)] = 1.0;
        }
        j
    }
}

fn add_scaled(a: &[f64], b: &[f64], c: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + c * y).collect()
}

impl VelocityField for PerturbedField {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn eval(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x)?;
        let v = self.base.eval(t, x)?;
        Ok(add_scaled(&v, &block_rotate(x), self.amplitude(t)))
    }

    fn jacobian(&self, t: f64, x: &[f64]) -> Result<Mat> {
        let jac = self.base.jacobian(t, x)?;
        jac.add(&self.rotation_matrix().scale(self.amplitude(t)))
    }

    fn time_partial(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let dt = self.base.time_partial(t, x)?;
        Ok(add_scaled(&dt, &block_rotate(x), self.amplitude_rate(t)))
    }

    fn eval_batch(&self, t: f64, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let base = self.base.eval_batch(t, xs)?;
        let a = self.amplitude(t);
        Ok(base
            .iter()
            .zip(xs)
            .map(|(v, x)| add_scaled(v, &block_rotate(x), a))
            .collect())
    }

    fn local_batch(&self, t: f64, xs: &[Vec<f64>]) -> Result<Vec<LocalState>> {
        let a = self.amplitude(t);
        let rate = self.amplitude_rate(t);
        let rot = self.rotation_matrix().scale(a);
        self.base
            .local_batch(t, xs)?
            .into_iter()
            .zip(xs)
            .map(|(s, x)| {
                let jx = block_rotate(x);
                Ok(LocalState {
                    velocity: add_scaled(&s.velocity, &jx, a),
                    jacobian: s.jacobian.add(&rot)?,
                    time_partial: add_scaled(&s.time_partial, &jx, rate),
                })
            })
            .collect()
    }

    fn exact_endpoint(&self, x0: &[f64]) -> Option<Vec<f64>> {
        if self.gamma == 0.0 {
            self.base.exact_endpoint(x0)
        } else {
            None
        }
    }

    fn is_optimal_transport(&self) -> bool {
        self.gamma == 0.0 && self.base.is_optimal_transport()
    }
}
