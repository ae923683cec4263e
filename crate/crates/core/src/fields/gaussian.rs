use super::{check_dim, VelocityField};
use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, Mat};
use crate::rng::{normal_points, stream_rng};

/// Target `N(mean, covariance)` for transport from `N(0, I)`.
#[derive(Clone, Debug)]
pub struct GaussianOtSpec {
    pub mean: Vec<f64>,
    pub covariance: Mat,
}

/// Eulerian velocity of the displacement interpolation between `N(0, I)` and
/// a Gaussian target. With `A = Σ^{1/2}` the particle path is
/// `y = (1 − t)x + t(Ax + μ)`, so
/// `v(t, y) = (A − I)((1 − t)I + tA)⁻¹(y − tμ) + μ`.
///
/// All solves run in the cached eigenbasis of `A`.
#[derive(Clone, Debug)]
pub struct GaussianOtField {
    mean: Vec<f64>,
    transport: Mat,
    basis: Mat,
    sigmas: Vec<f64>,
}

impl GaussianOtSpec {
    /// Seeded random target: `Σ = BBᵀ/d + ½I` with standard-normal `B`
    /// and a standard-normal mean, from the `covariance` stream at index `d`.
    pub fn random(seed: u64, d: usize) -> Self {
        let mut rng = stream_rng(seed, "covariance", d as u64);
        let rows = normal_points(&mut rng, d, d);
        let b = Mat::from_rows(&rows).expect("square draw");
        let covariance = b
            .matmul(&b.transpose())
            .expect("square")
            .scale(1.0 / d as f64)
            .add(&Mat::identity(d).scale(0.5))
            .expect("square");
        let mean = normal_points(&mut rng, 1, d).pop().unwrap();
        Self { mean, covariance }
    }
}

pub fn gaussian_ot_field(spec: &GaussianOtSpec) -> Result<GaussianOtField> {
    let d = spec.mean.len();
    if spec.covariance.rows() != d || spec.covariance.cols() != d {
        return Err(Error::Dimension {
            expected: d,
            got: spec.covariance.rows(),
        });
    }
    let eig = symmetric_eigen(&spec.covariance)?;
    if eig.min() <= 1e-12 {
        return Err(Error::NotPositiveDefinite(eig.min()));
    }
    let sigmas: Vec<f64> = eig.values.iter().map(|l| l.sqrt()).collect();
    let transport = Mat::from_eigen(&eig.vectors, &sigmas);
    Ok(GaussianOtField {
        mean: spec.mean.clone(),
        transport,
        basis: eig.vectors,
        sigmas,
    })
}

/// `‖S(t)‖²_F = Σᵢ ((σᵢ − 1)/((1 − t) + tσᵢ))²`.
pub fn gaussian_strain_norm_sq(sigmas: &[f64], t: f64) -> f64 {
    sigmas
        .iter()
        .map(|&s| {
            let r = (s - 1.0) / ((1.0 - t) + t * s);
            r * r
        })
        .sum()
}

impl GaussianOtField {
    /// Square roots of the eigenvalues of the target covariance.
    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    /// The OT map's linear part `A = Σ^{1/2}`.
    pub fn transport(&self) -> &Mat {
        &self.transport
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Diagonal of `((1 − t)I + tA)` in the eigenbasis.
    fn denominators(&self, t: f64) -> Result<Vec<f64>> {
        let m: Vec<f64> = self.sigmas.iter().map(|&s| (1.0 - t) + t * s).collect();
        if m.iter().any(|&v| v <= 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "(1 - t)I + tA is singular at t = {t}"
            )));
        }
        Ok(m)
    }

    fn to_basis(&self, y: &[f64]) -> Vec<f64> {
        let d = y.len();
        (0..d)
            .map(|k| (0..d).map(|i| self.basis[(i, k)] * y[i]).sum())
            .collect()
    }

    fn from_basis(&self, z: &[f64]) -> Vec<f64> {
        let d = z.len();
        (0..d)
            .map(|i| (0..d).map(|k| self.basis[(i, k)] * z[k]).sum())
            .collect()
    }

    fn shifted(&self, t: f64, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.mean).map(|(a, m)| a - t * m).collect()
    }
}

impl VelocityField for GaussianOtField {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn eval(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), y)?;
        let m = self.denominators(t)?;
        let z = self.to_basis(&self.shifted(t, y));
        let scaled: Vec<f64> = z
            .iter()
            .zip(&self.sigmas)
            .zip(&m)
            .map(|((zk, s), mk)| (s - 1.0) * zk / mk)
            .collect();
        let v = self.from_basis(&scaled);
        Ok(v.iter().zip(&self.mean).map(|(a, b)| a + b).collect())
    }

    fn jacobian(&self, t: f64, y: &[f64]) -> Result<Mat> {
        check_dim(self.dim(), y)?;
        let m = self.denominators(t)?;
        let rates: Vec<f64> = self
            .sigmas
            .iter()
            .zip(&m)
            .map(|(s, mk)| (s - 1.0) / mk)
            .collect();
        Ok(Mat::from_eigen(&self.basis, &rates))
    }

    /// `∂ₜv = −(A − I)M⁻¹(A − I)M⁻¹(y − tμ) − (A − I)M⁻¹μ`, `M = (1 − t)I + tA`.
    fn time_partial(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), y)?;
        let m = self.denominators(t)?;
        let z = self.to_basis(&self.shifted(t, y));
        let w = self.to_basis(&self.mean);
        let coeffs: Vec<f64> = (0..self.dim())
            .map(|k| {
                let rate = (self.sigmas[k] - 1.0) / m[k];
                -rate * rate * z[k] - rate * w[k]
            })
            .collect();
        Ok(self.from_basis(&coeffs))
    }

    fn exact_endpoint(&self, x0: &[f64]) -> Option<Vec<f64>> {
        let ax = self.transport.matvec(x0).ok()?;
        Some(ax.iter().zip(&self.mean).map(|(a, b)| a + b).collect())
    }

    fn is_optimal_transport(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius_sq, split_jacobian};
    use crate::rng::stream_rng;
    use rand::Rng;

    #[test]
    fn random_spec_is_seeded_and_positive_definite() {
        for d in [2, 10] {
            let a = GaussianOtSpec::random(3, d);
            assert_eq!(a.covariance, GaussianOtSpec::random(3, d).covariance);
            assert_ne!(a.covariance, GaussianOtSpec::random(4, d).covariance);
            assert!(symmetric_eigen(&a.covariance).unwrap().min() >= 0.5 - 1e-12);
            assert_eq!(a.mean.len(), d);
        }
    }

    fn isotropic(c: Vec<f64>) -> GaussianOtField {
        let d = c.len();
        gaussian_ot_field(&GaussianOtSpec {
            mean: c,
            covariance: Mat::identity(d),
        })
        .unwrap()
    }

    #[test]
    fn identity_covariance_is_pure_translation() {
        let f = isotropic(vec![1.5, -2.0]);
        for &(t, y) in &[(0.0, [0.3, 0.1]), (0.7, [-4.0, 2.0])] {
            assert_eq!(f.eval(t, &y).unwrap(), vec![1.5, -2.0]);
            assert_eq!(f.jacobian(t, &y).unwrap(), Mat::zeros(2, 2));
        }
    }

    #[test]
    fn one_dimensional_rate_at_start() {
        let f = gaussian_ot_field(&GaussianOtSpec {
            mean: vec![0.0],
            covariance: Mat::from_diag(&[4.0]),
        })
        .unwrap();
        assert!((f.jacobian(0.0, &[0.7]).unwrap()[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn jacobian_vorticity_is_exactly_zero() {
        let cov = Mat::from_rows(&[[2.0, 0.7, 0.1], [0.7, 1.5, -0.3], [0.1, -0.3, 0.8]]).unwrap();
        let f = gaussian_ot_field(&GaussianOtSpec {
            mean: vec![0.1, 0.2, 0.3],
            covariance: cov,
        })
        .unwrap();
        let mut rng = stream_rng(0, "gauss", 0);
        for _ in 0..100 {
            let t = rng.random_range(0.0..1.0);
            let y = [
                rng.random_range(-3.0..3.0),
                0.5,
                rng.random_range(-3.0..3.0),
            ];
            let split = split_jacobian(&f.jacobian(t, &y).unwrap()).unwrap();
            assert_eq!(split.vorticity, Mat::zeros(3, 3));
        }
    }

    #[test]
    fn strain_norm_closed_form_examples() {
        assert_eq!(gaussian_strain_norm_sq(&[1.0, 1.0], 0.4), 0.0);
        assert!((gaussian_strain_norm_sq(&[2.0, 3.0], 0.0) - 5.0).abs() < 1e-15);
        assert!((gaussian_strain_norm_sq(&[2.0], 1.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn strain_norm_matches_numeric_jacobian() {
        let mut rng = stream_rng(1, "gauss", 0);
        for _ in 0..100 {
            let d = rng.random_range(1..6);
            let data = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b = Mat::from_vec(d, d, data).unwrap();
            let cov = b
                .matmul(&b.transpose())
                .unwrap()
                .add(&Mat::identity(d).scale(0.2))
                .unwrap();
            let f = gaussian_ot_field(&GaussianOtSpec {
                mean: vec![0.0; d],
                covariance: cov,
            })
            .unwrap();
            let t = rng.random_range(0.0..1.0);
            let y: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let split = split_jacobian(&f.jacobian(t, &y).unwrap()).unwrap();
            let numeric = frobenius_sq(&split.strain);
            let closed = gaussian_strain_norm_sq(f.sigmas(), t);
            assert!((numeric - closed).abs() <= 1e-10 * closed.max(1.0));
        }
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let spec = GaussianOtSpec {
            mean: vec![0.0, 0.0],
            covariance: Mat::from_diag(&[1.0, -1.0]),
        };
        assert!(matches!(
            gaussian_ot_field(&spec),
            Err(Error::NotPositiveDefinite(_))
        ));
    }
}
