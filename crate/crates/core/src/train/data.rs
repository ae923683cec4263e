//! Pinwheel target distribution and conditional OT interpolation.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::rng::{standard_normal, stream_rng, StreamRng};

pub const PINWHEEL_ARMS: usize = 5;
pub const PINWHEEL_TWIST: f64 = 0.25;
pub const PINWHEEL_RADIAL_STD: f64 = 0.3;
pub const PINWHEEL_ANGULAR_STD: f64 = 0.05;
pub const PINWHEEL_SCALE: f64 = 2.0;

/// Population standard deviation of each raw pinwheel coordinate.
///
/// The arms are placed with 5-fold rotational symmetry, so the raw
/// distribution has zero mean and isotropic covariance `E[r²]/2 · I`. With
/// `r = 2|ρ|`, `ρ ~ N(1, 0.3²)`, `E[r²] = 4(1 + 0.09) = 4.36`.
pub fn pinwheel_std() -> f64 {
    let second_moment =
        PINWHEEL_SCALE * PINWHEEL_SCALE * (1.0 + PINWHEEL_RADIAL_STD * PINWHEEL_RADIAL_STD);
    (second_moment / 2.0).sqrt()
}

/// Unstandardized pinwheel draws.
pub fn pinwheel_raw(rng: &mut impl Rng, n: usize) -> Array2<f64> {
    let radial = Normal::new(1.0, PINWHEEL_RADIAL_STD).unwrap();
    let angular = Normal::new(0.0, PINWHEEL_ANGULAR_STD).unwrap();
    let mut out = Array2::zeros((n, 2));
    for mut row in out.rows_mut() {
        let arm = rng.random_range(0..PINWHEEL_ARMS) as f64;
        let r = PINWHEEL_SCALE * radial.sample(rng).abs();
        let theta =
            2.0 * PI * arm / PINWHEEL_ARMS as f64 + PINWHEEL_TWIST * r + angular.sample(rng);
        row[0] = r * theta.cos();
        row[1] = r * theta.sin();
    }
    out
}

/// `n` standardized pinwheel points, drawn from `rng`.
pub fn pinwheel_from(rng: &mut impl Rng, n: usize) -> Array2<f64> {
    pinwheel_raw(rng, n) / pinwheel_std()
}

/// `n` standardized pinwheel points from the `data` stream of `seed`.
pub fn sample_pinwheel(n: usize, seed: u64) -> Array2<f64> {
    pinwheel_from(&mut stream_rng(seed, "data", 0), n)
}

/// `x_t = (1 − (1 − σ)t)x₀ + t·x₁` and its target `u_t = x₁ − (1 − σ)x₀`.
pub fn interpolate(x0: &[f64], x1: &[f64], t: f64, sigma_min: f64) -> (Vec<f64>, Vec<f64>) {
    let a = 1.0 - (1.0 - sigma_min) * t;
    let xt = x0.iter().zip(x1).map(|(p, q)| a * p + t * q).collect();
    let ut = x0
        .iter()
        .zip(x1)
        .map(|(p, q)| q - (1.0 - sigma_min) * p)
        .collect();
    (xt, ut)
}

/// One training batch of independently coupled pairs.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x0: Array2<f64>,
    pub x1: Array2<f64>,
    pub t: Array1<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x0.ncols()
    }

    /// Draws `x₀ ~ N(0, I)`, `x₁ ~ pinwheel` and `t ~ U[0, 1]`, in that
    /// order, from one generator.
    pub fn sample(rng: &mut StreamRng, n: usize) -> Self {
        let x0 = Array2::from_shape_simple_fn((n, 2), || standard_normal(rng));
        let x1 = pinwheel_from(rng, n);
        let t = Array1::from_shape_simple_fn(n, || rng.random_range(0.0..1.0));
        Self { x0, x1, t }
    }

    /// Training batch of `epoch`: the `data` stream of `seed` at index
    /// `epoch`.
    pub fn for_epoch(seed: u64, epoch: usize, n: usize) -> Self {
        Self::sample(&mut stream_rng(seed, "data", epoch as u64), n)
    }

    /// Interpolated states and regression targets, each `B × d`.
    pub fn targets(&self, sigma_min: f64) -> (Array2<f64>, Array2<f64>) {
        let mut xt = Array2::zeros(self.x0.dim());
        let mut ut = Array2::zeros(self.x0.dim());
        for r in 0..self.len() {
            let (a, b) = interpolate(
                self.x0.row(r).as_slice().unwrap(),
                self.x1.row(r).as_slice().unwrap(),
                self.t[r],
                sigma_min,
            );
            xt.row_mut(r).assign(&Array1::from(a));
            ut.row_mut(r).assign(&Array1::from(b));
        }
        (xt, ut)
    }
}
