use super::{check_dim, VelocityField};
use crate::error::{Error, Result};
use crate::linalg::Mat;

const NEWTON_MAX_ITERS: usize = 100;
const NEWTON_TOL: f64 = 1e-13;
/// Step `η` of the central difference used for `∂ₜv`.
pub const TIME_FD_STEP: f64 = 1e-5;

/// OT map `T(x) = x + εx³` (coordinate-wise) from the potential
/// `Ψ(x) = ½‖x‖² + (ε/4)Σ xᵢ⁴`.
#[derive(Clone, Copy, Debug)]
pub struct QuarticOtSpec {
    pub eps: f64,
    pub dim: usize,
}

#[derive(Clone, Debug)]
pub struct QuarticOtField {
    eps: f64,
    dim: usize,
}

/// Solves `x + tεx³ = y` for `x` by Newton's method started at `y`.
///
/// The map is strictly increasing for `t, ε ≥ 0`, so the root is unique and
/// Newton converges monotonically after the first step.
pub fn invert_displacement(t: f64, y: f64, eps: f64) -> Result<f64> {
    let c = t * eps;
    let tol = NEWTON_TOL * y.abs().max(1.0);
    let mut x = y;
    for _ in 0..NEWTON_MAX_ITERS {
        let residual = x + c * x * x * x - y;
        let slope = 1.0 + 3.0 * c * x * x;
        if residual.abs() <= tol {
            // One polishing step costs nothing and usually lands on the
            // correctly rounded root.
            let polished = x - residual / slope;
            let r2 = polished + c * polished * polished * polished - y;
            return Ok(if r2.abs() <= residual.abs() {
                polished
            } else {
                x
            });
        }
        x -= residual / slope;
    }
    Err(Error::NoConvergence { t, y, eps })
}

pub fn quartic_ot_field(spec: &QuarticOtSpec) -> Result<QuarticOtField> {
    if !(0.0..=1.0).contains(&spec.eps) {
        return Err(Error::InvalidArgument(format!(
            "quartic eps must lie in [0, 1], got {}",
            spec.eps
        )));
    }
    if spec.dim == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    Ok(QuarticOtField {
        eps: spec.eps,
        dim: spec.dim,
    })
}

impl QuarticOtField {
    pub fn eps(&self) -> f64 {
        self.eps
    }

    fn preimage(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        y.iter()
            .map(|&yi| invert_displacement(t, yi, self.eps))
            .collect()
    }
}

impl VelocityField for QuarticOtField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, y)?;
        Ok(self
            .preimage(t, y)?
            .iter()
            .map(|x| self.eps * x * x * x)
            .collect())
    }

    /// `(H − I)[(1 − t)I + tH]⁻¹` with `H = I + 3ε diag(x²)`.
    fn jacobian(&self, t: f64, y: &[f64]) -> Result<Mat> {
        check_dim(self.dim, y)?;
        let diag: Vec<f64> = self
            .preimage(t, y)?
            .iter()
            .map(|x| {
                let h = 1.0 + 3.0 * self.eps * x * x;
                (h - 1.0) / ((1.0 - t) + t * h)
            })
            .collect();
        Ok(Mat::from_diag(&diag))
    }

    /// Five-point central difference at offsets `±η, ±2η`.
    fn time_partial(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        let h = TIME_FD_STEP;
        let p1 = self.eval(t + h, y)?;
        let m1 = self.eval(t - h, y)?;
        let p2 = self.eval(t + 2.0 * h, y)?;
        let m2 = self.eval(t - 2.0 * h, y)?;
        Ok((0..y.len())
            .map(|i| (8.0 * (p1[i] - m1[i]) - (p2[i] - m2[i])) / (12.0 * h))
            .collect())
    }

    fn exact_endpoint(&self, x0: &[f64]) -> Option<Vec<f64>> {
        Some(x0.iter().map(|x| x + self.eps * x * x * x).collect())
    }

    fn is_optimal_transport(&self) -> bool {
        true
    }
}
