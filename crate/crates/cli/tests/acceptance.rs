//! Acceptance suite: runs every criterion at its stated tolerance and
//! prints one PASS/FAIL line per criterion.
//!
//! Criteria 6, 8, 9 and 10 share the models trained by the 2000-epoch
//! sweep, which dominates the runtime (about 20 minutes on one core).
//! Failures are reported but only change the exit status when
//! `STRAINFLOW_ACCEPTANCE_STRICT=1`. Setting `STRAINFLOW_ACCEPTANCE_SWEEP`
//! to the output directory of an earlier run of the same sweep skips the
//! training.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use strainflow_cli::commands::bounds::random_linear_fields;
use strainflow_cli::output::verify_manifest;
use strainflow_core::autodiff::checkpoint::read_checkpoint;
use strainflow_core::autodiff::FlowModel;
use strainflow_core::bounds::{verify_bound, BoundReport};
use strainflow_core::fields::{
    gaussian_ot_field, material_derivative, perturbed_field, quartic_ot_field, GaussianOtSpec,
    QuarticOtSpec, VelocityField,
};
use strainflow_core::integrate::{
    convergence_study, exact_oracle, initial_points, rk4_oracle, DEFAULT_N_LIST,
};
use strainflow_core::linalg::{dot, frobenius_sq, log_norm, norm, split_jacobian, Mat};
use strainflow_core::metrics::{l2_against, reference_samples};
use strainflow_core::rng::{normal_points, stream_rng};
use strainflow_core::train::{
    eval_batch, evaluate_model, penalty_exact, penalty_hutchinson, rademacher_probes,
};

const SEED: u64 = 0;
const SWEEP_ALPHAS: [&str; 4] = ["0", "0.1", "0.3", "1"];

struct Outcome {
    id: u32,
    title: &'static str,
    pass: bool,
    detail: String,
}

type Fields = Vec<(String, Box<dyn VelocityField>)>;

fn gaussian_fields() -> Fields {
    [2, 10]
        .into_iter()
        .map(|d| {
            let f = gaussian_ot_field(&GaussianOtSpec::random(SEED, d)).unwrap();
            (
                format!("gaussian d={d}"),
                Box::new(f) as Box<dyn VelocityField>,
            )
        })
        .collect()
}

fn quartic_fields() -> Fields {
    let mut out: Fields = Vec::new();
    for d in [2, 5] {
        for eps in [0.3, 0.5] {
            let f = quartic_ot_field(&QuarticOtSpec { eps, dim: d }).unwrap();
            out.push((format!("quartic d={d} eps={eps}"), Box::new(f)));
        }
    }
    out
}

fn ot_fields() -> Fields {
    let mut f = gaussian_fields();
    f.extend(quartic_fields());
    f
}

/// Largest mean Euler error over the default step counts, against the
/// closed-form map.
fn exactness(fields: &Fields, tol: f64) -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, field) in fields {
        let x0s = initial_points(SEED, 256, field.dim());
        let s = convergence_study(
            field.as_ref(),
            &x0s,
            &DEFAULT_N_LIST,
            exact_oracle(field.as_ref()),
        )
        .unwrap();
        let worst = s.mean_error.iter().copied().fold(0.0, f64::max);
        pass &= worst <= tol;
        parts.push(format!("{name}: {worst:.1e}"));
    }
    (pass, parts.join("; "))
}

fn timed(limit_s: f64, start: Instant, (pass, detail): (bool, String)) -> (bool, String) {
    let secs = start.elapsed().as_secs_f64();
    (
        pass && secs < limit_s,
        format!("{detail}; {secs:.1} s (limit {limit_s} s)"),
    )
}

fn criterion_1() -> (bool, String) {
    let start = Instant::now();
    timed(5.0, start, exactness(&gaussian_fields(), 1e-10))
}

fn criterion_2() -> (bool, String) {
    let start = Instant::now();
    timed(10.0, start, exactness(&quartic_fields(), 1e-8))
}

fn criterion_3() -> (bool, String) {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, base) in ot_fields() {
        let d = base.dim();
        let control = perturbed_field(base, 0.5).unwrap();
        let x0s = initial_points(SEED, 256, d);
        let s = convergence_study(&control, &x0s, &DEFAULT_N_LIST, rk4_oracle(&control)).unwrap();
        let slope = s.fit.slope();
        pass &= slope.is_some_and(|k| (0.8..=1.2).contains(&k));
        parts.push(format!(
            "{name}: {}",
            slope.map_or("exact".into(), |k| format!("{k:.3}"))
        ));
    }
    timed(10.0, start, (pass, parts.join("; ")))
}

/// 1000 seeded `(t, y)` probes with `t ∈ [lo, hi]` and standard-normal `y`.
fn probes(name: &str, d: usize, lo: f64, hi: f64) -> Vec<(f64, Vec<f64>)> {
    let mut rng = stream_rng(SEED, name, d as u64);
    (0..1000)
        .map(|_| {
            let t = rng.random_range(lo..=hi);
            (t, normal_points(&mut rng, 1, d).remove(0))
        })
        .collect()
}

fn criterion_4() -> (bool, String) {
    let mut pass = true;
    let mut worst = 0.0f64;
    for (_, field) in ot_fields() {
        for (t, y) in probes("acceptance-irrotational", field.dim(), 0.0, 0.99) {
            let j = field.jacobian(t, &y).unwrap();
            let omega = split_jacobian(&j).unwrap().vorticity_sq().sqrt();
            let scale = 1.0 + frobenius_sq(&j).sqrt();
            pass &= omega <= 1e-12 * scale;
            worst = worst.max(omega / scale);
        }
    }
    (
        pass,
        format!("max ‖Ω‖/(1+‖∇v‖) = {worst:.1e} over 6 fields x 1000 probes"),
    )
}

fn criterion_5() -> (bool, String) {
    let mut worst = 0.0f64;
    for (_, field) in ot_fields() {
        for (t, y) in probes("acceptance-material", field.dim(), 0.01, 0.99) {
            worst = worst.max(norm(&material_derivative(field.as_ref(), t, &y).unwrap()));
        }
    }
    // The residual of the control is affine in y for a Gaussian base, so it
    // has a root; the probe mean is what separates it from an OT field.
    let mut norms = Vec::new();
    for (_, base) in gaussian_fields() {
        let d = base.dim();
        let control = perturbed_field(base, 0.5).unwrap();
        for (_, y) in probes("acceptance-material-control", d, 0.25, 0.25) {
            norms.push(norm(&material_derivative(&control, 0.25, &y).unwrap()));
        }
    }
    let mean = norms.iter().sum::<f64>() / norms.len() as f64;
    let smallest = norms.iter().copied().fold(f64::INFINITY, f64::min);
    (
        worst <= 1e-6 && mean > 1e-2,
        format!(
            "OT max ‖Dv/Dt‖ = {worst:.1e}; perturbed control at t=0.25: mean ‖Dv/Dt‖ = {mean:.3} (min {smallest:.3})"
        ),
    )
}

fn random_matrix(rng: &mut impl Rng, d: usize) -> Mat {
    Mat::from_rows(&normal_points(rng, d, d)).unwrap()
}

fn criterion_7() -> (bool, String) {
    let mut rng = stream_rng(SEED, "acceptance-linalg", 0);
    let (mut orth, mut skew, mut ineq) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for k in 0..1000 {
        let d = 2 + k % 7;
        let a = random_matrix(&mut rng, d);
        let split = split_jacobian(&a).unwrap();
        let inner = dot(split.strain.as_slice(), split.vorticity.as_slice());
        let denom = (split.strain_sq() * split.vorticity_sq())
            .sqrt()
            .max(f64::MIN_POSITIVE);
        let pythagoras =
            (split.strain_sq() + split.vorticity_sq() - frobenius_sq(&a)).abs() / frobenius_sq(&a);
        orth = orth.max((inner / denom).abs()).max(pythagoras);
        skew = skew.max(log_norm(&split.vorticity).unwrap().abs());
        let y = normal_points(&mut rng, 1, d).remove(0);
        let quad = dot(&y, &a.matvec(&y).unwrap());
        let bound = log_norm(&a).unwrap() * dot(&y, &y);
        // Relative excess; the eigen-solver rounds at about 1e-15.
        ineq = ineq.max((quad - bound) / dot(&y, &y).max(1.0));
    }
    (
        orth <= 1e-10 && skew <= 1e-12 && ineq <= 1e-12,
        format!(
            "orthogonality {orth:.1e}; |μ₂(Ω)| max {skew:.1e}; max (⟨y,Ay⟩ − μ₂‖y‖²)/‖y‖² = {ineq:.1e} (1000 draws)"
        ),
    )
}

fn strainflow(args: &[&str], config: &Path, out: &Path) -> i32 {
    let status = Command::new(env!("CARGO_BIN_EXE_strainflow"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .stderr(std::process::Stdio::null())
        .status()
        .expect("strainflow binary runs");
    status.code().unwrap_or(-1)
}

fn criterion_11(work: &Path) -> (bool, String) {
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, extra) in [
        ("exact", "reg_mode = exact"),
        ("hutchinson", "reg_mode = hutchinson"),
    ] {
        let cfg = work.join(format!("gradcheck-{name}.ini"));
        std::fs::write(&cfg, format!("[gradcheck]\nkinds = mlp, potential\nalpha = 0.3\nbeta = 0.1\ntol = 1e-3\n{extra}\n")).unwrap();
        let out = work.join(format!("gradcheck-{name}"));
        let code = strainflow(&["gradcheck"], &cfg, &out);
        let report: serde_json::Value =
            serde_json::from_reader(File::open(out.join("gradcheck.json")).unwrap()).unwrap();
        let worst = report["results"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| r["report"]["max_rel_deviation"].as_f64().unwrap())
            .fold(0.0, f64::max);
        pass &= code == 0;
        parts.push(format!(
            "{name}: exit {code}, max rel deviation {worst:.1e}"
        ));
    }
    (pass, parts.join("; "))
}

/// Byte-compares two output directories, skipping the manifest.
fn same_outputs(a: &Path, b: &Path) -> Result<usize, String> {
    let mut files = Vec::new();
    collect(a, a, &mut files);
    if files.is_empty() {
        return Err(format!("{} is empty", a.display()));
    }
    for rel in &files {
        if std::fs::read(a.join(rel)).ok() != std::fs::read(b.join(rel)).ok() {
            return Err(format!("{} differs", rel.display()));
        }
    }
    let mut other = Vec::new();
    collect(b, b, &mut other);
    if other.len() != files.len() {
        return Err("file lists differ".into());
    }
    Ok(files.len())
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect(root, &path, out);
        } else if path.file_name().unwrap() != "manifest.json" {
            out.push(path.strip_prefix(root).unwrap().to_path_buf());
        }
    }
    out.sort();
}

fn criterion_12(work: &Path) -> (bool, String) {
    let dir = work.join("determinism");
    std::fs::create_dir_all(&dir).unwrap();
    let train = "[train]\nepochs = 30\nhidden = 16\ndepth = 3\nbatch = 64\nlog_every = 10\neval_samples = 256\nalpha = 0.1\nbeta = 0.05\nreg_mode = hutchinson\nprobes = 2\n";
    let configs = [
        ("verify-ot", "[verify-ot]\ngaussian_dims = 2\nquartic_dims = 2\nquartic_eps = 0.5\nsamples = 64\n".to_string()),
        ("train", train.to_string()),
        ("sweep", format!("{train}\n[sweep]\nalphas = 0, 0.5\nsamples = 64\nstraightness_nfe = 20\n")),
        ("nfe-compare", "[nfe-compare]\ncheckpoints = train-a/model.ckpt\nlabels = m\nnfe_list = 2, 5, 20\nsamples = 128\nprojections = 16\n".to_string()),
        ("bounds", "[bounds]\nfield = linear\ndim = 3\ncount = 3\nn_list = 16\nsamples = 32\ngrid_n = 32\n".to_string()),
        ("gradcheck", "[gradcheck]\nbatch = 8\nhidden = 8\n".to_string()),
    ];
    let mut parts = Vec::new();
    let mut pass = true;
    for (command, text) in configs {
        let cfg = dir.join(format!("{command}.ini"));
        std::fs::write(&cfg, text).unwrap();
        let (a, b) = (
            dir.join(format!("{command}-a")),
            dir.join(format!("{command}-b")),
        );
        let codes = (
            strainflow(&[command], &cfg, &a),
            strainflow(&[command], &cfg, &b),
        );
        let manifests_ok = verify_manifest(&a).is_ok_and(|v| v.is_empty())
            && verify_manifest(&b).is_ok_and(|v| v.is_empty());
        let ran = codes.0 == codes.1 && codes.0 != 2;
        match same_outputs(&a, &b) {
            Ok(n) if ran && manifests_ok => parts.push(format!("{command}: {n} files identical")),
            Ok(_) => {
                pass = false;
                parts.push(format!(
                    "{command}: exit codes {codes:?}, manifests verified {manifests_ok}"
                ));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{command}: {e}"));
            }
        }
    }
    (pass, parts.join("; "))
}

/// Trains the four-weight sweep through the CLI and returns its output
/// directory with the run time in seconds.
fn run_sweep(work: &Path) -> (PathBuf, i32, f64) {
    let cfg = work.join("sweep.ini");
    std::fs::write(
        &cfg,
        "[train]\nepochs = 2000\n\n[sweep]\nalphas = 0, 0.1, 0.3, 1.0\nbetas = 0\nsamples = 1024\nstraightness_nfe = 100\n",
    )
    .unwrap();
    let out = work.join("sweep");
    let start = Instant::now();
    let code = strainflow(&["sweep"], &cfg, &out);
    (out, code, start.elapsed().as_secs_f64())
}

fn sweep_columns(dir: &Path) -> BTreeMap<String, Vec<f64>> {
    let text = std::fs::read_to_string(dir.join("sweep.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    let mut cols: BTreeMap<String, Vec<f64>> =
        header.iter().map(|h| (h.clone(), Vec::new())).collect();
    for line in lines {
        for (h, v) in header.iter().zip(line.split(',')) {
            cols.get_mut(h).unwrap().push(v.parse().unwrap());
        }
    }
    cols
}

fn criterion_9(dir: &Path, code: i32, secs: f64) -> (bool, String) {
    let cols = sweep_columns(dir);
    let show = |k: &str| {
        cols[k]
            .iter()
            .map(|v| format!("{v:.4}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let down = |k: &str| cols[k].windows(2).all(|w| w[1] < w[0]);
    let up = |k: &str| cols[k].windows(2).all(|w| w[1] >= w[0]);
    let checks = [
        ("strain_sq strictly decreasing", down("strain_sq")),
        ("l2_at_5 strictly decreasing", down("l2_at_5")),
        ("fm_loss non-decreasing", up("fm_loss")),
        ("straightness non-decreasing", up("straightness")),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let pass = failed.is_empty() && cols["alpha"].len() == 4 && secs < 1800.0;
    (
        pass,
        format!(
            "alpha {}; strain_sq {}; l2_at_5 {}; fm_loss {}; straightness {}; failed: [{}]; sweep exit {code}, {:.0} s (limit 1800 s)",
            show("alpha"),
            show("strain_sq"),
            show("l2_at_5"),
            show("fm_loss"),
            show("straightness"),
            failed.join(", "),
            secs
        ),
    )
}

fn load(path: &Path) -> FlowModel {
    read_checkpoint(&mut BufReader::new(File::open(path).unwrap())).unwrap()
}

fn sweep_models(dir: &Path) -> Vec<(String, FlowModel)> {
    SWEEP_ALPHAS
        .iter()
        .map(|a| {
            (
                a.to_string(),
                load(&dir.join(format!("models/alpha_{a}.ckpt"))),
            )
        })
        .collect()
}

fn criterion_6(models: &[(String, FlowModel)]) -> (bool, String) {
    let mut reports: Vec<BoundReport> = Vec::new();
    let linear = random_linear_fields(SEED, 2, 50, 0.5, false).unwrap();
    let mut linear_worst = 0.0f64;
    for (i, field) in linear.iter().enumerate() {
        let x0s = initial_points(SEED + i as u64, 64, 2);
        for n in [16, 32, 64] {
            let r = verify_bound(field, &x0s, n).unwrap();
            linear_worst = linear_worst.max(r.empirical_error / r.bound_general);
            reports.push(r);
        }
    }
    let mut trained_worst = 0.0f64;
    let x0s = initial_points(SEED, 256, 2);
    for (_, model) in models {
        for n in [16, 32, 64] {
            let r = verify_bound(model, &x0s, n).unwrap();
            trained_worst = trained_worst.max(r.empirical_error / r.bound_general);
            reports.push(r);
        }
    }
    let holds = reports.iter().all(|r| r.pass);
    let ordered = reports.iter().all(BoundReport::regimes_ordered);
    (
        holds && ordered,
        format!(
            "{} reports; max empirical/bound: linear {linear_worst:.2e}, trained {trained_worst:.2e}; regimes ordered {ordered}",
            reports.len()
        ),
    )
}

fn criterion_8(baseline: &FlowModel) -> (bool, String) {
    let batch = eval_batch(SEED, 256);
    let probes = rademacher_probes(&mut stream_rng(SEED, "probes", 0), 1000, batch.len(), 2);
    let (hs, hv) = penalty_hutchinson(baseline, &batch, &probes, 0.0, 1e-4).unwrap();
    let (es, ev) = penalty_exact(baseline, &batch, 0.0).unwrap();
    let (rs, rv) = ((hs / es - 1.0).abs(), (hv / ev - 1.0).abs());
    let (xt, _) = batch.targets(0.0);
    let mut identity = 0.0f64;
    for (row, &t) in xt.rows().into_iter().zip(batch.t.iter()) {
        let j = baseline.jacobian(t, row.as_slice().unwrap()).unwrap();
        let split = split_jacobian(&j).unwrap();
        let total = frobenius_sq(&j);
        identity = identity
            .max((split.strain_sq() + split.vorticity_sq() - total).abs() / total.max(1e-300));
    }
    (
        rs <= 0.05 && rv <= 0.05 && identity <= 1e-10,
        format!(
            "strain {hs:.4} vs exact {es:.4} ({:.2}%), vort {hv:.5} vs exact {ev:.5} ({:.2}%); identity residual {identity:.1e}",
            100.0 * rs,
            100.0 * rv
        ),
    )
}

fn criterion_10(work: &Path, models: &[(String, FlowModel)]) -> (bool, String) {
    let baseline = &models[0].1;
    let eval = eval_batch(SEED, 4096);
    let base = evaluate_model(baseline, &eval, 0.0).unwrap();
    let cfg = work.join("potential.ini");
    std::fs::write(&cfg, "[train]\nmodel_kind = potential\nepochs = 300\n").unwrap();
    let out = work.join("potential");
    let code = strainflow(&["train"], &cfg, &out);
    let potential = load(&out.join("model.ckpt"));
    let pot = evaluate_model(&potential, &eval, 0.0).unwrap();
    let x0s = initial_points(SEED, 1024, 2);
    let l2 = |m: &FlowModel| l2_against(m, &x0s, &reference_samples(m, &x0s).unwrap(), 5).unwrap();
    let ratio = base.vort_sq / base.strain_sq;
    (
        ratio <= 0.1 && pot.vort_sq <= 1e-8,
        format!(
            "baseline vort/strain = {:.4} / {:.4} = {ratio:.4}; potential (300 epochs, exit {code}) vort {:.1e}; \
             informational L2@5: potential {:.4}, alpha 0.3 {:.4}, alpha 1 {:.4}",
            base.vort_sq,
            base.strain_sq,
            pot.vort_sq,
            l2(&potential),
            l2(&models[2].1),
            l2(&models[3].1)
        ),
    )
}

fn main() {
    let work = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = std::fs::remove_dir_all(&work);
    std::fs::create_dir_all(&work).unwrap();
    let mut outcomes: Vec<Outcome> = Vec::new();
    let mut record = |id: u32, title: &'static str, (pass, detail): (bool, String)| {
        eprintln!(
            "[{}] criterion {id}: {detail}",
            if pass { "pass" } else { "FAIL" }
        );
        outcomes.push(Outcome {
            id,
            title,
            pass,
            detail,
        });
    };

    record(1, "Gaussian OT exactness", criterion_1());
    record(2, "Nonlinear OT exactness", criterion_2());
    record(3, "Non-OT first order", criterion_3());
    record(4, "Irrotationality", criterion_4());
    record(5, "Zero material derivative", criterion_5());
    record(7, "Orthogonality and log-norm", criterion_7());
    record(11, "Gradient checks", criterion_11(&work));
    record(12, "Determinism", criterion_12(&work));
    let (sweep_dir, code, secs) = match std::env::var_os("STRAINFLOW_ACCEPTANCE_SWEEP") {
        Some(dir) => {
            eprintln!("reusing the sweep in {}", dir.to_string_lossy());
            let dir = PathBuf::from(dir);
            let manifest: serde_json::Value =
                serde_json::from_reader(File::open(dir.join("manifest.json")).unwrap()).unwrap();
            let code = manifest["exit_code"].as_i64().unwrap_or(-1) as i32;
            (
                dir,
                code,
                manifest["wall_clock_seconds"].as_f64().unwrap_or(f64::NAN),
            )
        }
        None => {
            eprintln!("training the 2000-epoch sweep");
            run_sweep(&work)
        }
    };
    record(
        9,
        "Regularization trends",
        criterion_9(&sweep_dir, code, secs),
    );
    let models = sweep_models(&sweep_dir);
    record(6, "Separated bound validity", criterion_6(&models));
    record(8, "Estimator consistency", criterion_8(&models[0].1));
    record(
        10,
        "Strain-vorticity asymmetry",
        criterion_10(&work, &models),
    );

    outcomes.sort_by_key(|o| o.id);
    println!();
    for o in &outcomes {
        println!(
            "{} {:>2} {}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.id,
            o.title,
            o.detail
        );
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!(
        "\n{} of {} criteria passed",
        outcomes.len() - failed,
        outcomes.len()
    );
    if failed > 0 && std::env::var("STRAINFLOW_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
