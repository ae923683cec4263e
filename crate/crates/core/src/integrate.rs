//! Fixed-step integration of velocity fields on `t ∈ [0, 1]`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::VelocityField;
use crate::linalg::distance;
use crate::rng::{normal_points, stream_rng};

/// Euler steps of the reference solution.
pub const REFERENCE_STEPS: usize = 500;
/// RK4 steps used to cross-check the reference.
pub const CROSS_CHECK_STEPS: usize = 200;
/// RK4 steps of the high-accuracy oracle for fields without a closed form.
pub const RK4_ORACLE_STEPS: usize = 2048;
/// Errors below this are floating-point noise and excluded from slope fits.
pub const ERROR_FLOOR: f64 = 1e-12;
pub const DEFAULT_N_LIST: [usize; 6] = [2, 4, 8, 16, 32, 64];
pub const DEFAULT_BATCH: usize = 256;

/// Euler path on the uniform grid `tₙ = n/N`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn start(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn endpoint(&self) -> &[f64] {
        self.states.last().unwrap()
    }
}

fn grid(n: usize) -> Vec<f64> {
    (0..=n).map(|k| k as f64 / n as f64).collect()
}

fn check_steps(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "number of steps must be at least 1".into(),
        ));
    }
    Ok(())
}

fn check_finite(states: &[Vec<f64>], step: usize) -> Result<()> {
    if states.iter().all(|x| x.iter().all(|v| v.is_finite())) {
        Ok(())
    } else {
        Err(Error::Integration { step })
    }
}

fn axpy(x: &mut [f64], a: f64, v: &[f64]) {
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi += a * vi;
    }
}

/// `N` Euler steps `xₙ₊₁ = xₙ + h·v(tₙ, xₙ)` for a batch of starting
/// points, calling `visit(n, states)` before each step and at the end.
fn euler_visit(
    field: &dyn VelocityField,
    x0s: &[Vec<f64>],
    n: usize,
    mut visit: impl FnMut(usize, &[Vec<f64>]),
) -> Result<Vec<Vec<f64>>> {
    check_steps(n)?;
    let h = 1.0 / n as f64;
    let mut states = x0s.to_vec();
    check_finite(&states, 0)?;
    for step in 0..n {
        visit(step, &states);
        let v = field.eval_batch(step as f64 * h, &states)?;
        for (x, vx) in states.iter_mut().zip(&v) {
            axpy(x, h, vx);
        }
        check_finite(&states, step + 1)?;
    }
    visit(n, &states);
    Ok(states)
}

pub fn euler_integrate(field: &dyn VelocityField, x0: &[f64], n: usize) -> Result<Trajectory> {
    Ok(euler_trajectories(field, &[x0.to_vec()], n)?.pop().unwrap())
}

/// Euler trajectories of every starting point, stepped together so neural
/// fields see one batched evaluation per step.
pub fn euler_trajectories(
    field: &dyn VelocityField,
    x0s: &[Vec<f64>],
    n: usize,
) -> Result<Vec<Trajectory>> {
    let times = grid(n.max(1));
    let mut paths: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(n + 1); x0s.len()];
    euler_visit(field, x0s, n, |_, states| {
        for (p, x) in paths.iter_mut().zip(states) {
            p.push(x.clone());
        }
    })?;
    Ok(paths
        .into_iter()
        .map(|states| Trajectory {
            times: times.clone(),
            states,
        })
        .collect())
}

pub fn euler_endpoints(
    field: &dyn VelocityField,
    x0s: &[Vec<f64>],
    n: usize,
) -> Result<Vec<Vec<f64>>> {
    euler_visit(field, x0s, n, |_, _| {})
}

/// Euler run that also exposes each visited `(tₙ, xₙ)` batch, the final
/// state included.
pub fn euler_with_visitor(
    field: &dyn VelocityField,
    x0s: &[Vec<f64>],
    n: usize,
    mut visit: impl FnMut(f64, &[Vec<f64>]) -> Result<()>,
) -> Result<Vec<Vec<f64>>> {
    let h = 1.0 / n.max(1) as f64;
    let mut failure = None;
    let end = euler_visit(field, x0s, n, |step, states| {
        if failure.is_none() {
            failure = visit(step as f64 * h, states).err();
        }
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(end),
    }
}

/// Classical four-stage Runge–Kutta endpoints.
pub fn rk4_endpoints(
    field: &dyn VelocityField,
    x0s: &[Vec<f64>],
    n: usize,
) -> Result<Vec<Vec<f64>>> {
    check_steps(n)?;
    let h = 1.0 / n as f64;
    let mut states = x0s.to_vec();
    let shifted = |base: &[Vec<f64>], a: f64, k: &[Vec<f64>]| -> Vec<Vec<f64>> {
        base.iter()
            .zip(k)
            .map(|(x, kx)| {
                let mut y = x.clone();
                axpy(&mut y, a, kx);
                y
            })
            .collect()
    };
    for step in 0..n {
        let t = step as f64 * h;
        let k1 = field.eval_batch(t, &states)?;
        let k2 = field.eval_batch(t + 0.5 * h, &shifted(&states, 0.5 * h, &k1))?;
        let k3 = field.eval_batch(t + 0.5 * h, &shifted(&states, 0.5 * h, &k2))?;
        let k4 = field.eval_batch(t + h, &shifted(&states, h, &k3))?;
        for (i, x) in states.iter_mut().enumerate() {
            for j in 0..x.len() {
                x[j] += h / 6.0 * (k1[i][j] + 2.0 * k2[i][j] + 2.0 * k3[i][j] + k4[i][j]);
            }
        }
        check_finite(&states, step + 1)?;
    }
    Ok(states)
}

/// Euler-at-500 reference endpoints with the RK4 cross-check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReferenceRun {
    pub endpoints: Vec<Vec<f64>>,
    /// Mean and max distance between the Euler reference and RK4 at
    /// [`CROSS_CHECK_STEPS`].
    pub rk4_discrepancy_mean: f64,
    pub rk4_discrepancy_max: f64,
}

pub fn reference_endpoints(field: &dyn VelocityField, x0s: &[Vec<f64>]) -> Result<ReferenceRun> {
    let endpoints = euler_endpoints(field, x0s, REFERENCE_STEPS)?;
    let rk4 = rk4_endpoints(field, x0s, CROSS_CHECK_STEPS)?;
    let gaps: Vec<f64> = endpoints
        .iter()
        .zip(&rk4)
        .map(|(a, b)| distance(a, b))
        .collect();
    Ok(ReferenceRun {
        rk4_discrepancy_mean: mean(&gaps),
        rk4_discrepancy_max: gaps.iter().copied().fold(0.0, f64::max),
        endpoints,
    })
}

pub fn reference_endpoint(field: &dyn VelocityField, x0: &[f64]) -> Result<Vec<f64>> {
    Ok(reference_endpoints(field, &[x0.to_vec()])?
        .endpoints
        .pop()
        .unwrap())
}

/// Closed-form time-1 map of an OT displacement field.
pub fn exact_ot_endpoint(field: &dyn VelocityField, x0: &[f64]) -> Result<Vec<f64>> {
    if !field.is_optimal_transport() {
        return Err(Error::Contract(
            "exact endpoint requested for a non-OT field".into(),
        ));
    }
    field
        .exact_endpoint(x0)
        .ok_or_else(|| Error::Contract("OT field does not expose its transport map".into()))
}

/// Deterministic standard-normal starting points.
pub fn initial_points(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
    normal_points(&mut stream_rng(seed, "x0", 0), n, d)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Least-squares fit of `log₁₀ e = slope·log₁₀ h + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SlopeFit {
    Fitted {
        slope: f64,
        intercept: f64,
        points: usize,
    },
    /// Fewer than three errors rose above [`ERROR_FLOOR`].
    Exact,
}

impl SlopeFit {
    pub fn slope(&self) -> Option<f64> {
        match self {
            SlopeFit::Fitted { slope, .. } => Some(*slope),
            SlopeFit::Exact => None,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, SlopeFit::Exact)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceSeries {
    pub n: Vec<usize>,
    pub h: Vec<f64>,
    pub mean_error: Vec<f64>,
    pub max_error: Vec<f64>,
    pub fit: SlopeFit,
}

pub const CONVERGENCE_HEADER: &str = "N,h,mean_error,max_error";

impl ConvergenceSeries {
    pub fn write_csv(&self, out: &mut impl std::io::Write) -> Result<()> {
        writeln!(out, "{CONVERGENCE_HEADER}")?;
        for i in 0..self.n.len() {
            writeln!(
                out,
                "{},{:e},{:e},{:e}",
                self.n[i], self.h[i], self.mean_error[i], self.max_error[i]
            )?;
        }
        Ok(())
    }
}

pub fn fit_slope(h: &[f64], errors: &[f64]) -> SlopeFit {
    let pts: Vec<(f64, f64)> = h
        .iter()
        .zip(errors)
        .filter(|(_, &e)| e >= ERROR_FLOOR)
        .map(|(&h, &e)| (h.log10(), e.log10()))
        .collect();
    if pts.len() < 3 {
        return SlopeFit::Exact;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    SlopeFit::Fitted {
        slope,
        intercept: my - slope * mx,
        points: pts.len(),
    }
}

/// Mean and max Euler endpoint error against `oracle` for each `N`.
///
/// `oracle` maps the batch of starting points to their true endpoints and
/// is called once.
pub fn convergence_study(
    field: &dyn VelocityField,
    x0s: &[Vec<f64>],
    n_list: &[usize],
    oracle: impl FnOnce(&[Vec<f64>]) -> Result<Vec<Vec<f64>>>,
) -> Result<ConvergenceSeries> {
    if n_list.len() < 3 {
        return Err(Error::InvalidArgument(
            "a convergence study needs at least 3 step sizes".into(),
        ));
    }
    if n_list.windows(2).any(|w| w[0] >= w[1]) || n_list[0] == 0 {
        return Err(Error::InvalidArgument(
            "step counts must be positive and strictly increasing".into(),
        ));
    }
    if x0s.is_empty() {
        return Err(Error::InvalidArgument("no starting points".into()));
    }
    let truth = oracle(x0s)?;
    if truth.len() != x0s.len() {
        return Err(Error::Dimension {
            expected: x0s.len(),
            got: truth.len(),
        });
    }
    let mut series = ConvergenceSeries {
        n: n_list.to_vec(),
        h: n_list.iter().map(|&n| 1.0 / n as f64).collect(),
        mean_error: Vec::new(),
        max_error: Vec::new(),
        fit: SlopeFit::Exact,
    };
    for &n in n_list {
        let ends = euler_endpoints(field, x0s, n)?;
        let errs: Vec<f64> = ends
            .iter()
            .zip(&truth)
            .map(|(a, b)| distance(a, b))
            .collect();
        series.mean_error.push(mean(&errs));
        series
            .max_error
            .push(errs.iter().copied().fold(0.0, f64::max));
    }
    series.fit = fit_slope(&series.h, &series.mean_error);
    Ok(series)
}

/// Oracle for [`convergence_study`] from the closed-form OT map.
pub fn exact_oracle(
    field: &dyn VelocityField,
) -> impl FnOnce(&[Vec<f64>]) -> Result<Vec<Vec<f64>>> + '_ {
    move |xs| xs.iter().map(|x| exact_ot_endpoint(field, x)).collect()
}

/// Oracle for [`convergence_study`] from RK4 at [`RK4_ORACLE_STEPS`].
pub fn rk4_oracle(
    field: &dyn VelocityField,
) -> impl FnOnce(&[Vec<f64>]) -> Result<Vec<Vec<f64>>> + '_ {
    move |xs| rk4_endpoints(field, xs, RK4_ORACLE_STEPS)
}
