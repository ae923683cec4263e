//! `sweep`: trains one model per strain weight and tabulates the
//! regularization trade-off.

use std::io::Write;

use serde::Serialize;
use strainflow_core::integrate::{euler_trajectories, initial_points};
use strainflow_core::metrics::{l2_against, reference_samples, straightness};
use strainflow_core::train::{eval_batch, evaluate_model, TrainConfig, PINWHEEL_DIM};

use super::train::{eval_samples, train_config, train_logged, write_model};
use super::{number_tag, report, Check};
use crate::{CliError, Context};

pub const KEYS: &[&str] = &[
    "alphas",
    "betas",
    "samples",
    "straightness_nfe",
    "save_models",
];

pub const SWEEP_HEADER: &str = "alpha,fm_loss,strain_sq,l2_at_5,l2_at_10,straightness";
pub const DEFAULT_ALPHAS: [f64; 4] = [0.0, 0.1, 0.3, 1.0];
pub const DEFAULT_SAMPLES: usize = 1024;
pub const DEFAULT_STRAIGHTNESS_NFE: usize = 100;

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub beta: f64,
    pub fm_loss: f64,
    pub strain_sq: f64,
    pub vort_sq: f64,
    pub l2_at_5: f64,
    pub l2_at_10: f64,
    pub straightness: f64,
    pub error: Option<String>,
}

impl SweepRow {
    fn failed(alpha: f64, beta: f64, error: String) -> Self {
        Self {
            alpha,
            beta,
            fm_loss: f64::NAN,
            strain_sq: f64::NAN,
            vort_sq: f64::NAN,
            l2_at_5: f64::NAN,
            l2_at_10: f64::NAN,
            straightness: f64::NAN,
            error: Some(error),
        }
    }
}

pub fn write_sweep_csv(rows: &[SweepRow], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{:e}",
            r.alpha, r.fm_loss, r.strain_sq, r.l2_at_5, r.l2_at_10, r.straightness
        )?;
    }
    Ok(())
}

/// Trend predicates over rows sorted by increasing `alpha`.
pub fn trend_checks(rows: &[SweepRow]) -> Vec<Check> {
    let col = |f: fn(&SweepRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let strictly_down = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    let non_decreasing = |v: &[f64]| v.windows(2).all(|w| w[1] >= w[0]);
    let show = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:.4}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let failed: Vec<String> = rows
        .iter()
        .filter(|r| r.error.is_some())
        .map(|r| number_tag(r.alpha))
        .collect();
    let strain = col(|r| r.strain_sq);
    let l2 = col(|r| r.l2_at_5);
    let fm = col(|r| r.fm_loss);
    let st = col(|r| r.straightness);
    vec![
        Check::new(
            "all_rows_succeeded",
            failed.is_empty(),
            format!("failed alphas: [{}]", failed.join(", ")),
        ),
        Check::new(
            "strain_sq_strictly_decreasing",
            strictly_down(&strain),
            show(&strain),
        ),
        Check::new("l2_at_5_strictly_decreasing", strictly_down(&l2), show(&l2)),
        Check::new("fm_loss_non_decreasing", non_decreasing(&fm), show(&fm)),
        Check::new(
            "straightness_non_decreasing",
            non_decreasing(&st),
            show(&st),
        ),
    ]
}

struct Probe {
    x0s: Vec<Vec<f64>>,
    eval_samples: usize,
    straightness_nfe: usize,
}

fn sweep_row(
    ctx: &mut Context,
    cfg: &TrainConfig,
    probe: &Probe,
    save: bool,
) -> Result<SweepRow, CliError> {
    let tag = number_tag(cfg.alpha);
    let prefix = format!("[alpha {tag}] ");
    let outcome = train_logged(ctx, cfg, &format!("logs/alpha_{tag}.csv"), &prefix)?;
    let model = outcome.model;
    if save {
        write_model(ctx, &model, &format!("models/alpha_{tag}.ckpt"))?;
    }
    let eval = evaluate_model(
        &model,
        &eval_batch(cfg.seed, probe.eval_samples),
        cfg.sigma_min,
    )?;
    let reference = reference_samples(&model, &probe.x0s)?;
    let trajectories = euler_trajectories(&model, &probe.x0s, probe.straightness_nfe)?;
    Ok(SweepRow {
        alpha: cfg.alpha,
        beta: cfg.beta,
        fm_loss: eval.fm_loss,
        strain_sq: eval.strain_sq,
        vort_sq: eval.vort_sq,
        l2_at_5: l2_against(&model, &probe.x0s, &reference, 5)?,
        l2_at_10: l2_against(&model, &probe.x0s, &reference, 10)?,
        straightness: straightness(&trajectories),
        error: None,
    })
}

#[derive(Serialize)]
struct Summary<'a> {
    base: &'a TrainConfig,
    samples: usize,
    eval_samples: usize,
    straightness_nfe: usize,
    rows: &'a [SweepRow],
    checks: &'a [Check],
}

pub fn run(ctx: &mut Context) -> Result<bool, CliError> {
    let base = train_config(&ctx.config.section("train"), ctx.seed)?;
    let n_eval = eval_samples(&ctx.config.section("train"))?;
    let sec = ctx.config.section("sweep");
    let mut alphas: Vec<f64> = sec.list_or("alphas", &DEFAULT_ALPHAS)?;
    let betas: Vec<f64> = sec.list_or("betas", &[0.0])?;
    let samples = sec.get_or("samples", DEFAULT_SAMPLES)?;
    let straightness_nfe = sec.get_or("straightness_nfe", DEFAULT_STRAIGHTNESS_NFE)?;
    let save = sec.get_or("save_models", true)?;
    if alphas.is_empty() || alphas.iter().any(|a| !a.is_finite()) {
        return Err(CliError::Config(
            "[sweep] alphas must be a non-empty list of numbers".into(),
        ));
    }
    if betas.len() != 1 && betas.len() != alphas.len() {
        return Err(CliError::Config(
            "[sweep] betas needs one value or one per alpha".into(),
        ));
    }
    let mut grid: Vec<(f64, f64)> = alphas
        .drain(..)
        .enumerate()
        .map(|(i, a)| (a, betas[if betas.len() == 1 { 0 } else { i }]))
        .collect();
    grid.sort_by(|a, b| a.0.total_cmp(&b.0));
    if grid.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(CliError::Config("[sweep] alphas must be distinct".into()));
    }

    ctx.use_stream("x0");
    ctx.use_stream("eval");
    ctx.note(
        "l2_at_k",
        "mean Euler endpoint distance to the NFE-500 Euler endpoint of the same model",
    );
    ctx.note(
        "straightness",
        format!("mean chord/path ratio of Euler trajectories at NFE {straightness_nfe}"),
    );
    ctx.note(
        "fm_loss,strain_sq",
        format!("fixed evaluation batch of {n_eval} pairs"),
    );
    let probe = Probe {
        x0s: initial_points(ctx.seed, samples, PINWHEEL_DIM),
        eval_samples: n_eval,
        straightness_nfe,
    };
    let mut rows = Vec::new();
    for (alpha, beta) in grid {
        let cfg = TrainConfig {
            alpha,
            beta,
            ..base.clone()
        };
        let row = sweep_row(ctx, &cfg, &probe, save).unwrap_or_else(|e| {
            eprintln!("[alpha {}] failed: {e}", number_tag(alpha));
            SweepRow::failed(alpha, beta, e.to_string())
        });
        rows.push(row);
    }
    ctx.out
        .write_with("sweep.csv", |buf| write_sweep_csv(&rows, buf))?;
    let checks = trend_checks(&rows);
    ctx.out.write_json(
        "summary.json",
        &Summary {
            base: &base,
            samples,
            eval_samples: n_eval,
            straightness_nfe,
            rows: &rows,
            checks: &checks,
        },
    )?;
    Ok(report(&checks))
}
