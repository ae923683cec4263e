//! Flow constants sampled along trajectories and the separated global error
//! bound for explicit Euler.
//!
//! With `μ₊ = sup λ_max(S)`, `M_t = sup‖∂ₜv‖`, `M_S = sup‖Sv‖` and
//! `M_Ω = sup‖Ωv‖` over the horizon `T`, the bound reads
//!
//! ```text
//! ‖e_N‖ ≤ h (M_t + M_S + M_Ω) / 2 · (e^{μ₊T} − 1) / μ₊
//! ```
//!
//! and the three regimes drop the strain growth (A), the vorticity term (B)
//! or both (C).

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::{LocalState, VelocityField};
use crate::integrate::{euler_endpoints, euler_with_visitor, rk4_endpoints};
use crate::linalg::{distance, frobenius_sq, norm, split_jacobian, symmetric_eig_max, Mat};

/// Below this `|μ₊|` the growth factor uses its `μ → 0` limit `T`.
pub const MU_LIMIT: f64 = 1e-8;
pub const MIN_GRID_N: usize = 16;
pub const DEFAULT_GRID_N: usize = 200;
pub const DEFAULT_TRAJECTORIES: usize = 256;
/// Safety factor applied to constants that were estimated by sampling.
pub const SAMPLED_MARGIN: f64 = 1.2;
/// RK4 steps of the reference endpoint when a field has no closed form.
pub const REFERENCE_RK4_STEPS: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FlowConstants {
    /// Largest sampled `λ_max(S)`, possibly negative.
    pub mu_sup: f64,
    /// `max(mu_sup, 0)`, the exponent used by the bounds.
    pub mu_plus: f64,
    pub m_t: f64,
    pub m_s: f64,
    pub m_omega: f64,
    pub horizon: f64,
    pub sample_count: usize,
    /// Largest sampled operator norm `‖∇ₓv‖₂`.
    pub lipschitz: Option<f64>,
}

impl FlowConstants {
    /// Constants with every supremum inflated by `factor`.
    pub fn with_margin(&self, factor: f64) -> Self {
        Self {
            mu_sup: self.mu_sup * factor,
            mu_plus: self.mu_plus * factor,
            m_t: self.m_t * factor,
            m_s: self.m_s * factor,
            m_omega: self.m_omega * factor,
            lipschitz: self.lipschitz.map(|l| l * factor),
            ..*self
        }
    }
}

/// `(e^{μT} − 1)/μ`, evaluated through `expm1`.
pub fn growth_factor(mu: f64, horizon: f64) -> f64 {
    if mu.abs() < MU_LIMIT {
        horizon
    } else {
        (mu * horizon).exp_m1() / mu
    }
}

pub fn theorem1_bound(c: &FlowConstants, h: f64) -> f64 {
    h * (c.m_t + c.m_s + c.m_omega) / 2.0 * growth_factor(c.mu_plus, c.horizon)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RegimeBounds {
    /// Strain removed: `hT/2 (M_t + M_Ω)`.
    pub a: f64,
    /// Vorticity removed: `h (M_t + M_S)/2 · (e^{μ₊T} − 1)/μ₊`.
    pub b: f64,
    /// Both removed: `hT/2 · M_t`.
    pub c: f64,
}

pub fn regime_bounds(c: &FlowConstants, h: f64) -> RegimeBounds {
    let t = c.horizon;
    RegimeBounds {
        a: h * t / 2.0 * (c.m_t + c.m_omega),
        b: h * (c.m_t + c.m_s) / 2.0 * growth_factor(c.mu_plus, t),
        c: h * t / 2.0 * c.m_t,
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct PointStats {
    mu: f64,
    m_t: f64,
    m_s: f64,
    m_omega: f64,
    lipschitz: f64,
}

impl PointStats {
    fn max(self, o: Self) -> Self {
        Self {
            mu: self.mu.max(o.mu),
            m_t: self.m_t.max(o.m_t),
            m_s: self.m_s.max(o.m_s),
            m_omega: self.m_omega.max(o.m_omega),
            lipschitz: self.lipschitz.max(o.lipschitz),
        }
    }
}

fn point_stats(s: &LocalState) -> Result<PointStats> {
    if !s.jacobian.is_finite() || s.time_partial.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(
            "Jacobian or time partial along a trajectory".into(),
        ));
    }
    let split = split_jacobian(&s.jacobian)?;
    let jtj = s.jacobian.transpose().matmul(&s.jacobian)?;
    Ok(PointStats {
        mu: symmetric_eig_max(&split.strain)?,
        m_t: norm(&s.time_partial),
        m_s: norm(&split.strain.matvec(&s.velocity)?),
        m_omega: norm(&split.vorticity.matvec(&s.velocity)?),
        lipschitz: symmetric_eig_max(&jtj)?.max(0.0).sqrt(),
    })
}

/// Samples the flow constants at every state of the Euler trajectories of
/// `x0s` with `grid_n` steps, endpoints included.
pub fn estimate_flow_constants(
    field: &dyn VelocityField,
    x0s: &[Vec<f64>],
    grid_n: usize,
) -> Result<FlowConstants> {
    if grid_n < MIN_GRID_N {
        return Err(Error::InvalidArgument(format!(
            "grid_N must be at least {MIN_GRID_N}, got {grid_n}"
        )));
    }
    if x0s.is_empty() {
        return Err(Error::InvalidArgument("no starting points".into()));
    }
    let mut acc = PointStats {
        mu: f64::NEG_INFINITY,
        ..PointStats::default()
    };
    let mut count = 0;
    euler_with_visitor(field, x0s, grid_n, |t, states| {
        let locals = field.local_batch(t, states)?;
        let stats = locals
            .par_iter()
            .map(point_stats)
            .collect::<Result<Vec<_>>>()?;
        acc = stats.into_iter().fold(acc, PointStats::max);
        count += states.len();
        Ok(())
    })?;
    Ok(FlowConstants {
        mu_sup: acc.mu,
        mu_plus: acc.mu.max(0.0),
        m_t: acc.m_t,
        m_s: acc.m_s,
        m_omega: acc.m_omega,
        horizon: 1.0,
        sample_count: count,
        lipschitz: Some(acc.lipschitz),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    /// Closed-form time-1 map.
    Exact,
    /// RK4 at [`REFERENCE_RK4_STEPS`].
    Rk4,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundOptions {
    pub grid_n: usize,
    /// Multiplies every sampled constant before the bounds are evaluated.
    pub margin: f64,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self {
            grid_n: DEFAULT_GRID_N,
            margin: SAMPLED_MARGIN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    /// Sampled constants before the margin.
    pub constants: FlowConstants,
    pub margin: f64,
    pub grid_n: usize,
    pub trajectories: usize,
    pub n: usize,
    pub h: f64,
    pub bound_general: f64,
    pub bound_regime_a: f64,
    pub bound_regime_b: f64,
    pub bound_regime_c: f64,
    /// Mean Euler endpoint distance to the reference.
    pub empirical_error: f64,
    pub empirical_max_error: f64,
    pub reference: ReferenceKind,
    /// The bound carries an `O(h²)` remainder, so it is only asserted for
    /// `N ≥ 16`; smaller `N` is reported but not judged.
    pub asserted: bool,
    pub pass: bool,
}

impl BoundReport {
    /// `C ≤ A ≤ general` and `C ≤ B ≤ general`.
    pub fn regimes_ordered(&self) -> bool {
        let (g, a, b, c) = (
            self.bound_general,
            self.bound_regime_a,
            self.bound_regime_b,
            self.bound_regime_c,
        );
        c <= a && a <= g && c <= b && b <= g
    }
}

pub fn verify_bound(field: &dyn VelocityField, x0s: &[Vec<f64>], n: usize) -> Result<BoundReport> {
    verify_bound_with(field, x0s, n, &BoundOptions::default())
}

pub fn verify_bound_with(
    field: &dyn VelocityField,
    x0s: &[Vec<f64>],
    n: usize,
    opts: &BoundOptions,
) -> Result<BoundReport> {
    if !(opts.margin >= 1.0 && opts.margin.is_finite()) {
        return Err(Error::InvalidArgument(
            "margin must be a finite factor ≥ 1".into(),
        ));
    }
    let constants = estimate_flow_constants(field, x0s, opts.grid_n)?;
    let exact: Option<Vec<Vec<f64>>> = x0s.iter().map(|x| field.exact_endpoint(x)).collect();
    let (truth, reference) = match exact {
        Some(t) => (t, ReferenceKind::Exact),
        None => (
            rk4_endpoints(field, x0s, REFERENCE_RK4_STEPS)?,
            ReferenceKind::Rk4,
        ),
    };
    let ends = euler_endpoints(field, x0s, n)?;
    let errs: Vec<f64> = ends
        .iter()
        .zip(&truth)
        .map(|(a, b)| distance(a, b))
        .collect();
    let empirical = errs.iter().sum::<f64>() / errs.len() as f64;
    let h = 1.0 / n as f64;
    let inflated = constants.with_margin(opts.margin);
    let general = theorem1_bound(&inflated, h);
    let regimes = regime_bounds(&inflated, h);
    Ok(BoundReport {
        constants,
        margin: opts.margin,
        grid_n: opts.grid_n,
        trajectories: x0s.len(),
        n,
        h,
        bound_general: general,
        bound_regime_a: regimes.a,
        bound_regime_b: regimes.b,
        bound_regime_c: regimes.c,
        empirical_error: empirical,
        empirical_max_error: errs.iter().copied().fold(0.0, f64::max),
        reference,
        asserted: n >= MIN_GRID_N,
        pass: empirical <= general,
    })
}

/// `λ_max(S)`, `‖S‖_F` and their ratio, which lies in `[1, √d]` for PSD `S`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpectralReport {
    pub lambda_max: f64,
    pub frob: f64,
    pub ratio: f64,
}

pub fn frobenius_spectral_report(s: &Mat) -> Result<SpectralReport> {
    let lambda_max = symmetric_eig_max(s)?;
    if lambda_max <= 0.0 {
        return Err(Error::Contract(format!(
            "spectral ratio needs a positive top eigenvalue, got {lambda_max:e}"
        )));
    }
    let frob = frobenius_sq(s).sqrt();
    Ok(SpectralReport {
        lambda_max,
        frob,
        ratio: frob / lambda_max,
    })
}
