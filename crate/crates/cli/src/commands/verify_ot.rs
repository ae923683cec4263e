//! `verify-ot`: Euler convergence on exact OT fields and on rotationally
//! perturbed controls.

use serde::Serialize;
use strainflow_core::fields::{
    gaussian_ot_field, perturbed_field, quartic_ot_field, GaussianOtSpec, QuarticOtSpec,
    VelocityField,
};
use strainflow_core::integrate::{
    convergence_study, exact_ot_endpoint, initial_points, rk4_endpoints, ConvergenceSeries,
    SlopeFit, DEFAULT_BATCH, DEFAULT_N_LIST, RK4_ORACLE_STEPS,
};

use super::{number_tag, report, Check};
use crate::{CliError, Context};

pub const KEYS: &[&str] = &[
    "gaussian_dims",
    "quartic_dims",
    "quartic_eps",
    "n_list",
    "samples",
    "gamma",
    "gaussian_tol",
    "quartic_tol",
    "slope_min",
    "slope_max",
];

/// Largest mean endpoint error an OT series may show.
pub const GAUSSIAN_TOL: f64 = 1e-10;
/// Looser than the Gaussian tolerance because the quartic field inverts
/// its displacement map by Newton's method.
pub const QUARTIC_TOL: f64 = 1e-8;

#[derive(Clone, Debug, Serialize)]
struct StudyResult {
    name: String,
    family: &'static str,
    dim: usize,
    eps: Option<f64>,
    /// Perturbation amplitude; `None` for the OT field itself.
    gamma: Option<f64>,
    oracle: &'static str,
    fit: SlopeFit,
    max_mean_error: f64,
    csv: String,
}

struct Settings {
    n_list: Vec<usize>,
    samples: usize,
    gamma: f64,
    slope: (f64, f64),
}

pub fn run(ctx: &mut Context) -> Result<bool, CliError> {
    let sec = ctx.config.section("verify-ot");
    let gaussian_dims: Vec<usize> = sec.list_or("gaussian_dims", &[2, 10])?;
    let quartic_dims: Vec<usize> = sec.list_or("quartic_dims", &[2, 5])?;
    let quartic_eps: Vec<f64> = sec.list_or("quartic_eps", &[0.3, 0.5])?;
    let gaussian_tol = sec.get_or("gaussian_tol", GAUSSIAN_TOL)?;
    let quartic_tol = sec.get_or("quartic_tol", QUARTIC_TOL)?;
    let settings = Settings {
        n_list: sec.list_or("n_list", &DEFAULT_N_LIST)?,
        samples: sec.get_or("samples", DEFAULT_BATCH)?,
        gamma: sec.get_or("gamma", strainflow_core::fields::DEFAULT_GAMMA)?,
        slope: (sec.get_or("slope_min", 0.8)?, sec.get_or("slope_max", 1.2)?),
    };
    ctx.use_stream("covariance");
    ctx.use_stream("x0");

    let seed = ctx.seed;
    let mut results = Vec::new();
    let mut checks = Vec::new();
    for &d in &gaussian_dims {
        let make = || {
            gaussian_ot_field(&GaussianOtSpec::random(seed, d))
                .map(|f| Box::new(f) as Box<dyn VelocityField>)
        };
        let name = format!("gaussian_d{d}");
        study_pair(
            ctx,
            &settings,
            &name,
            "gaussian",
            d,
            None,
            gaussian_tol,
            &make,
            &mut results,
            &mut checks,
        )?;
    }
    for &d in &quartic_dims {
        for &eps in &quartic_eps {
            let make = || {
                quartic_ot_field(&QuarticOtSpec { eps, dim: d })
                    .map(|f| Box::new(f) as Box<dyn VelocityField>)
            };
            let name = format!("quartic_d{d}_eps{}", number_tag(eps));
            study_pair(
                ctx,
                &settings,
                &name,
                "quartic",
                d,
                Some(eps),
                quartic_tol,
                &make,
                &mut results,
                &mut checks,
            )?;
        }
    }
    ctx.out.write_json("slopes.json", &results)?;
    Ok(report(&checks))
}

/// Runs the OT study and its perturbed control for one field.
#[allow(clippy::too_many_arguments)]
fn study_pair(
    ctx: &mut Context,
    s: &Settings,
    name: &str,
    family: &'static str,
    dim: usize,
    eps: Option<f64>,
    tol: f64,
    make: &dyn Fn() -> strainflow_core::Result<Box<dyn VelocityField>>,
    results: &mut Vec<StudyResult>,
    checks: &mut Vec<Check>,
) -> Result<(), CliError> {
    let x0s = initial_points(ctx.seed, s.samples, dim);

    let field = make()?;
    let series = convergence_study(field.as_ref(), &x0s, &s.n_list, |xs| {
        xs.iter()
            .map(|x| exact_ot_endpoint(field.as_ref(), x))
            .collect()
    })?;
    let worst = max_mean(&series);
    checks.push(Check::new(
        name,
        series.fit.is_exact() && worst <= tol,
        format!(
            "max mean error {worst:.3e} (tolerance {tol:e}), exact flag {}",
            series.fit.is_exact()
        ),
    ));
    results.push(write_series(
        ctx, name, family, dim, eps, None, "exact", &series,
    )?);

    // The control shares the base field's exact map only when it is not
    // perturbed; otherwise RK4 at a fine step is the oracle.
    let control = perturbed_field(make()?, s.gamma)?;
    let degenerate = s.gamma == 0.0;
    let series = convergence_study(&control, &x0s, &s.n_list, |xs| {
        if degenerate {
            xs.iter()
                .map(|x| exact_ot_endpoint(field.as_ref(), x))
                .collect()
        } else {
            rk4_endpoints(&control, xs, RK4_ORACLE_STEPS)
        }
    })?;
    let control_name = format!("{name}_control");
    let check = if degenerate {
        let worst = max_mean(&series);
        Check::new(
            &control_name,
            series.fit.is_exact() && worst <= tol,
            format!("gamma = 0, max mean error {worst:.3e}"),
        )
    } else {
        match series.fit.slope() {
            Some(slope) => Check::new(
                &control_name,
                (s.slope.0..=s.slope.1).contains(&slope),
                format!("slope {slope:.4} (allowed [{}, {}])", s.slope.0, s.slope.1),
            ),
            None => Check::new(&control_name, false, "control unexpectedly flagged exact"),
        }
    };
    checks.push(check);
    let oracle = if degenerate { "exact" } else { "rk4" };
    results.push(write_series(
        ctx,
        &control_name,
        family,
        dim,
        eps,
        Some(s.gamma),
        oracle,
        &series,
    )?);
    Ok(())
}

fn max_mean(series: &ConvergenceSeries) -> f64 {
    series.mean_error.iter().copied().fold(0.0, f64::max)
}

#[allow(clippy::too_many_arguments)]
fn write_series(
    ctx: &mut Context,
    name: &str,
    family: &'static str,
    dim: usize,
    eps: Option<f64>,
    gamma: Option<f64>,
    oracle: &'static str,
    series: &ConvergenceSeries,
) -> Result<StudyResult, CliError> {
    let csv = format!("{name}.csv");
    ctx.out.write_with(&csv, |buf| series.write_csv(buf))?;
    Ok(StudyResult {
        name: name.to_string(),
        family,
        dim,
        eps,
        gamma,
        oracle,
        fit: series.fit,
        max_mean_error: max_mean(series),
        csv,
    })
}
