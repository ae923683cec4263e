//! `nfe-compare`: sampling quality against the number of Euler steps for
//! several checkpoints.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::Serialize;
use strainflow_core::autodiff::checkpoint::read_checkpoint;
use strainflow_core::autodiff::FlowModel;
use strainflow_core::integrate::initial_points;
use strainflow_core::metrics::{
    metric_row, reference_samples, write_metric_rows, MetricRow, DEFAULT_PROJECTIONS,
    DEFAULT_SAMPLE_SIZE,
};
use strainflow_core::rng::stream_rng;
use strainflow_core::train::{pinwheel_from, PINWHEEL_DIM};

use super::{report, Check};
use crate::{CliError, Context};

pub const KEYS: &[&str] = &[
    "checkpoints",
    "labels",
    "nfe_list",
    "samples",
    "projections",
    "baseline",
    "baseline_nfe",
];

pub const DEFAULT_NFE_LIST: [usize; 7] = [1, 2, 5, 10, 20, 50, 100];
pub const DEFAULT_BASELINE_NFE: usize = 20;

#[derive(Serialize)]
struct ModelSummary {
    label: String,
    checkpoint: String,
    kind: String,
    rows: Vec<MetricRow>,
    /// Smallest NFE whose L2 is at or below the baseline's at
    /// `baseline_nfe`.
    matches_baseline_at: Option<usize>,
    l2_decreasing: bool,
}

#[derive(Serialize)]
struct Summary {
    baseline: String,
    baseline_nfe: usize,
    baseline_l2: f64,
    samples: usize,
    projections: usize,
    models: Vec<ModelSummary>,
    checks: Vec<Check>,
}

pub fn load_model(path: &Path) -> Result<FlowModel, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;
    Ok(read_checkpoint(&mut BufReader::new(file))?)
}

fn label_ok(label: &str) -> bool {
    !label.is_empty()
        && label
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

pub fn run(ctx: &mut Context) -> Result<bool, CliError> {
    let sec = ctx.config.section("nfe-compare");
    let paths = sec
        .paths("checkpoints")?
        .ok_or_else(|| CliError::Config("[nfe-compare] checkpoints is required".into()))?;
    let labels: Vec<String> = match sec.list::<String>("labels")? {
        Some(l) => l,
        None => paths
            .iter()
            .map(|p| {
                p.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default()
            })
            .collect(),
    };
    if labels.len() != paths.len() {
        return Err(CliError::Config(
            "[nfe-compare] needs one label per checkpoint".into(),
        ));
    }
    if let Some(bad) = labels.iter().find(|l| !label_ok(l)) {
        return Err(CliError::Config(format!(
            "[nfe-compare] label `{bad}` must be [A-Za-z0-9._-]+"
        )));
    }
    if (1..labels.len()).any(|i| labels[..i].contains(&labels[i])) {
        return Err(CliError::Config(
            "[nfe-compare] labels must be distinct".into(),
        ));
    }
    let mut nfe_list: Vec<usize> = sec.list_or("nfe_list", &DEFAULT_NFE_LIST)?;
    let samples = sec.get_or("samples", DEFAULT_SAMPLE_SIZE)?;
    let projections = sec.get_or("projections", DEFAULT_PROJECTIONS)?;
    let baseline_nfe = sec.get_or("baseline_nfe", DEFAULT_BASELINE_NFE)?;
    let baseline = sec.get_or("baseline", labels[0].clone())?;
    let Some(baseline_idx) = labels.iter().position(|l| *l == baseline) else {
        return Err(CliError::Config(format!(
            "[nfe-compare] baseline `{baseline}` is not a label"
        )));
    };
    if !nfe_list.contains(&baseline_nfe) {
        nfe_list.push(baseline_nfe);
    }
    nfe_list.sort_unstable();
    nfe_list.dedup();
    if nfe_list.first() == Some(&0) || samples == 0 || projections == 0 {
        return Err(CliError::Config(
            "[nfe-compare] nfe values, samples and projections must be positive".into(),
        ));
    }
    let models = paths
        .iter()
        .map(|p| load_model(p))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(m) = models.iter().find(|m| m.state_dim() != PINWHEEL_DIM) {
        return Err(CliError::Config(format!(
            "checkpoint has state dimension {}, expected {PINWHEEL_DIM}",
            m.state_dim()
        )));
    }

    ctx.use_stream("x0");
    ctx.use_stream("target");
    ctx.use_stream("projections");
    ctx.note(
        "l2",
        "mean Euler endpoint distance to the NFE-500 Euler endpoint of the same model",
    );
    ctx.note(
        "sw",
        "sliced Wasserstein-2 distance to a fresh pinwheel sample of equal size",
    );
    ctx.note(
        "straightness",
        "mean chord/path ratio of the Euler trajectories",
    );
    let x0s = initial_points(ctx.seed, samples, PINWHEEL_DIM);
    let target: Vec<Vec<f64>> = pinwheel_from(&mut stream_rng(ctx.seed, "target", 0), samples)
        .rows()
        .into_iter()
        .map(|r| r.to_vec())
        .collect();

    let mut summaries = Vec::new();
    for ((model, label), path) in models.iter().zip(&labels).zip(&paths) {
        eprintln!("[{label}] reference endpoints");
        let reference = reference_samples(model, &x0s)?;
        let rows = nfe_list
            .iter()
            .map(|&nfe| metric_row(model, &x0s, &reference, &target, nfe, projections, ctx.seed))
            .collect::<Result<Vec<_>, _>>()?;
        ctx.out.write_with(&format!("metrics_{label}.csv"), |buf| {
            write_metric_rows(&rows, buf)
        })?;
        summaries.push(ModelSummary {
            label: label.clone(),
            checkpoint: path.display().to_string(),
            kind: model.kind().to_string(),
            l2_decreasing: rows.windows(2).all(|w| w[1].l2 < w[0].l2),
            rows,
            matches_baseline_at: None,
        });
    }
    let baseline_l2 = summaries[baseline_idx]
        .rows
        .iter()
        .find(|r| r.nfe == baseline_nfe)
        .map(|r| r.l2)
        .expect("baseline NFE is in the list");
    let mut checks = Vec::new();
    for s in &mut summaries {
        s.matches_baseline_at = s.rows.iter().find(|r| r.l2 <= baseline_l2).map(|r| r.nfe);
        let l2: Vec<String> = s
            .rows
            .iter()
            .map(|r| format!("{}:{:.4}", r.nfe, r.l2))
            .collect();
        checks.push(Check::new(
            format!("{}_l2_decreasing", s.label),
            s.l2_decreasing,
            l2.join(" "),
        ));
    }
    ctx.out.write_json(
        "summary.json",
        &Summary {
            baseline,
            baseline_nfe,
            baseline_l2,
            samples,
            projections,
            models: summaries,
            checks: checks.clone(),
        },
    )?;
    Ok(report(&checks))
}
