//! `train`: one flow-matching run with checkpoint, metrics log and
//! evaluation summary.

use serde::Serialize;
use strainflow_core::autodiff::checkpoint::write_checkpoint;
use strainflow_core::autodiff::{FlowModel, ModelKind};
use strainflow_core::train::{
    eval_batch, evaluate_model, train_with, EvalMetrics, LogRecord, TrainConfig, TrainOutcome,
};
use strainflow_core::Error;

use super::{report, Check};
use crate::config::Section;
use crate::{CliError, Context};

pub const KEYS: &[&str] = &[
    "alpha",
    "beta",
    "lr",
    "batch",
    "epochs",
    "sigma_min",
    "reg_mode",
    "probes",
    "model_kind",
    "log_every",
    "hidden",
    "depth",
    "fd_step",
    "eval_samples",
];

pub const DEFAULT_EVAL_SAMPLES: usize = 4096;
/// Largest mean `‖Ω‖²` accepted for a potential-parameterized model.
pub const POTENTIAL_VORT_TOL: f64 = 1e-8;

/// Reads a [`TrainConfig`] from `[train]`; missing keys keep their
/// defaults and the seed is the run's root seed.
pub fn train_config(sec: &Section<'_>, seed: u64) -> Result<TrainConfig, CliError> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        alpha: sec.get_or("alpha", d.alpha)?,
        beta: sec.get_or("beta", d.beta)?,
        lr: sec.get_or("lr", d.lr)?,
        batch: sec.get_or("batch", d.batch)?,
        epochs: sec.get_or("epochs", d.epochs)?,
        seed,
        sigma_min: sec.get_or("sigma_min", d.sigma_min)?,
        reg_mode: sec.get_or("reg_mode", d.reg_mode)?,
        probes: sec.get_or("probes", d.probes)?,
        model_kind: sec.get_or("model_kind", d.model_kind)?,
        log_every: sec.get_or("log_every", d.log_every)?,
        hidden: sec.get_or("hidden", d.hidden)?,
        depth: sec.get_or("depth", d.depth)?,
        fd_step: sec.get_or("fd_step", d.fd_step)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn eval_samples(sec: &Section<'_>) -> Result<usize, CliError> {
    sec.get_or("eval_samples", DEFAULT_EVAL_SAMPLES)
}

fn print_record(prefix: &str, r: &LogRecord) {
    eprintln!(
        "{prefix}epoch {:>6}  fm {:.5}  strain {:.5}  vort {:.5}",
        r.epoch, r.fm_loss, r.strain_sq, r.vort_sq
    );
}

/// Trains with progress on stderr. On divergence the partial log is
/// written to `log_path` before the error is returned.
pub fn train_logged(
    ctx: &mut Context,
    cfg: &TrainConfig,
    log_path: &str,
    prefix: &str,
) -> Result<TrainOutcome, CliError> {
    ctx.use_stream("init");
    ctx.use_stream("data");
    ctx.use_stream("probes");
    match train_with(cfg, |r| print_record(prefix, r)) {
        Ok(outcome) => {
            ctx.out
                .write_with(log_path, |buf| outcome.log.write_csv(buf))?;
            Ok(outcome)
        }
        Err(Error::Diverged { epoch, log }) => {
            ctx.out.write_with(log_path, |buf| log.write_csv(buf))?;
            Err(Error::Diverged { epoch, log }.into())
        }
        Err(e) => Err(e.into()),
    }
}

pub fn write_model(ctx: &mut Context, model: &FlowModel, path: &str) -> Result<(), CliError> {
    ctx.out
        .write_with(path, |buf| write_checkpoint(model, buf))?;
    Ok(())
}

#[derive(Serialize)]
struct Summary<'a> {
    config: &'a TrainConfig,
    first: Option<LogRecord>,
    last: Option<LogRecord>,
    eval_samples: usize,
    /// The seeded initialization on the same evaluation batch.
    initial: EvalMetrics,
    eval: EvalMetrics,
    checks: &'a [Check],
}

/// Predicates of a finished run: the evaluation FM loss fell below that
/// of the initialization, and a potential model is irrotational.
pub fn run_checks(cfg: &TrainConfig, initial: &EvalMetrics, eval: &EvalMetrics) -> Vec<Check> {
    let finite = [eval.fm_loss, eval.strain_sq, eval.vort_sq]
        .iter()
        .all(|v| v.is_finite());
    let mut checks = vec![
        Check::new("eval_finite", finite, format!("{eval:?}")),
        Check::new(
            "fm_loss_decreased",
            eval.fm_loss < initial.fm_loss,
            format!(
                "{:.5} at initialization -> {:.5}",
                initial.fm_loss, eval.fm_loss
            ),
        ),
    ];
    if cfg.model_kind == ModelKind::Potential {
        checks.push(Check::new(
            "potential_irrotational",
            eval.vort_sq <= POTENTIAL_VORT_TOL,
            format!(
                "vort_sq {:.3e} (tolerance {POTENTIAL_VORT_TOL:e})",
                eval.vort_sq
            ),
        ));
    }
    checks
}

pub fn run(ctx: &mut Context) -> Result<bool, CliError> {
    let sec = ctx.config.section("train");
    let cfg = train_config(&sec, ctx.seed)?;
    let n_eval = eval_samples(&sec)?;
    let outcome = train_logged(ctx, &cfg, "metrics.csv", "")?;
    write_model(ctx, &outcome.model, "model.ckpt")?;
    ctx.use_stream("eval");
    let batch = eval_batch(cfg.seed, n_eval);
    let initial = evaluate_model(&cfg.init_model()?, &batch, cfg.sigma_min)?;
    let eval = evaluate_model(&outcome.model, &batch, cfg.sigma_min)?;
    let checks = run_checks(&cfg, &initial, &eval);
    ctx.out.write_json(
        "summary.json",
        &Summary {
            config: &cfg,
            first: outcome.log.first().copied(),
            last: outcome.log.last().copied(),
            eval_samples: n_eval,
            initial,
            eval,
            checks: &checks,
        },
    )?;
    Ok(report(&checks))
}
