//! `gradcheck`: reverse-mode gradients of the training objective against
//! central finite differences.

use serde::Serialize;
use strainflow_core::autodiff::gradcheck::{gradcheck, GradcheckReport};
use strainflow_core::autodiff::{FlowModel, ModelKind};
use strainflow_core::rng::stream_rng;
use strainflow_core::train::{
    rademacher_probes, Batch, LossObjective, LossSettings, LossTerm, RegMode, PINWHEEL_DIM,
};

use super::{report, Check};
use crate::{CliError, Context};

pub const KEYS: &[&str] = &[
    "kinds", "batch", "hidden", "depth", "alpha", "beta", "reg_mode", "probes", "tol", "corrupt",
];

pub const DEFAULT_TOL: f64 = 1e-3;

#[derive(Serialize)]
struct TermReport {
    kind: ModelKind,
    term: LossTerm,
    report: GradcheckReport,
}

#[derive(Serialize)]
struct Output {
    settings: LossSettings,
    batch: usize,
    hidden: usize,
    depth: usize,
    /// Scale applied to the activation derivative in the backward pass;
    /// anything but 1 is a deliberately wrong partial.
    corrupt: f64,
    results: Vec<TermReport>,
}

pub fn run(ctx: &mut Context) -> Result<bool, CliError> {
    let sec = ctx.config.section("gradcheck");
    let kinds: Vec<ModelKind> = sec.list_or("kinds", &[ModelKind::Mlp, ModelKind::Potential])?;
    let batch_size = sec.get_or("batch", 32)?;
    let hidden = sec.get_or("hidden", 32)?;
    let depth = sec.get_or("depth", 3)?;
    let tol = sec.get_or("tol", DEFAULT_TOL)?;
    let corrupt = sec.get_or("corrupt", 1.0)?;
    let probes = sec.get_or("probes", 2)?;
    let settings = LossSettings {
        alpha: sec.get_or("alpha", 0.3)?,
        beta: sec.get_or("beta", 0.1)?,
        sigma_min: 0.0,
        reg_mode: sec.get_or("reg_mode", RegMode::Exact)?,
        fd_step: 1e-4,
        activation_fault: corrupt,
    };
    if batch_size == 0 || probes == 0 || !(tol > 0.0) || !corrupt.is_finite() {
        return Err(CliError::Config(
            "[gradcheck] batch, probes and tol must be positive".into(),
        ));
    }
    if settings.alpha == 0.0 && settings.beta == 0.0 {
        return Err(CliError::Config(
            "[gradcheck] alpha or beta must be positive to check the penalty".into(),
        ));
    }
    ctx.use_stream("init");
    ctx.use_stream("data");
    ctx.use_stream("probes");
    ctx.use_stream("gradcheck");

    let batch = Batch::sample(&mut stream_rng(ctx.seed, "data", 0), batch_size);
    let probe_set = rademacher_probes(
        &mut stream_rng(ctx.seed, "probes", 0),
        probes,
        batch_size,
        PINWHEEL_DIM,
    );
    let mut results = Vec::new();
    let mut checks = Vec::new();
    for kind in kinds {
        let model = FlowModel::new(kind, PINWHEEL_DIM, hidden, depth, ctx.seed)?;
        let params = model.params().to_flat();
        for term in [LossTerm::Fm, LossTerm::Penalty] {
            let objective = LossObjective {
                model: &model,
                batch: &batch,
                probes: probe_set.clone(),
                settings,
                term,
            };
            let r = gradcheck(&params, &objective, tol, ctx.seed)?;
            let worst = r
                .coordinates
                .iter()
                .max_by(|a, b| a.rel_deviation.total_cmp(&b.rel_deviation))
                .map(|c| {
                    format!(
                        " at index {} (analytic {:.6e}, numeric {:.6e})",
                        c.index, c.analytic, c.numeric
                    )
                })
                .unwrap_or_default();
            checks.push(Check::new(
                format!(
                    "{kind}_{}",
                    serde_json::to_value(term)?.as_str().unwrap_or("term")
                ),
                r.pass,
                format!("max relative deviation {:.3e}{worst}", r.max_rel_deviation),
            ));
            results.push(TermReport {
                kind,
                term,
                report: r,
            });
        }
    }
    ctx.out.write_json(
        "gradcheck.json",
        &Output {
            settings,
            batch: batch_size,
            hidden,
            depth,
            corrupt,
            results,
        },
    )?;
    Ok(report(&checks))
}
