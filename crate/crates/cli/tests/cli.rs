//! End-to-end runs of the `strainflow` binary on small configs.

use std::path::{Path, PathBuf};
use std::process::Command;

use strainflow_cli::output::verify_manifest;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn strainflow(command: &str, config: &Path, out: &Path) -> i32 {
    let status = Command::new(env!("CARGO_BIN_EXE_strainflow"))
        .args([command, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .status()
        .unwrap();
    status.code().unwrap()
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path).unwrap()
}

const TINY_TRAIN: &str = "[train]\nepochs = 40\nhidden = 16\ndepth = 3\nbatch = 64\nlog_every = 10\neval_samples = 128\nlr = 3e-3\n";

#[test]
fn verify_ot_writes_series_and_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "v.ini",
        "[verify-ot]\ngaussian_dims = 2\nquartic_dims = 2\nquartic_eps = 0.3\nsamples = 32\ngamma = 0\n",
    );
    let out = dir.path().join("out");
    assert_eq!(strainflow("verify-ot", &cfg, &out), 0);
    let csv = read(out.join("gaussian_d2.csv"));
    assert!(csv.starts_with("N,h,mean_error,max_error\n2,5e-1,"));
    assert_eq!(csv.lines().count(), 7);
    // With gamma = 0 the control is the OT field itself.
    let slopes: serde_json::Value = serde_json::from_str(&read(out.join("slopes.json"))).unwrap();
    let control = slopes
        .as_array()
        .unwrap()
        .iter()
        .find(|s| s["name"] == "gaussian_d2_control")
        .unwrap();
    assert_eq!(control["fit"]["kind"], "exact");
    assert!(verify_manifest(&out).unwrap().is_empty());
}

#[test]
fn train_then_compare_and_bound_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t.ini", TINY_TRAIN);
    let run = dir.path().join("run");
    assert_eq!(strainflow("train", &cfg, &run), 0);
    let metrics = read(run.join("metrics.csv"));
    let epochs: Vec<&str> = metrics
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(epochs, ["1", "10", "20", "30", "40"]);
    assert!(run.join("model.ckpt").exists());

    let cmp = write_config(
        dir.path(),
        "n.ini",
        "[nfe-compare]\ncheckpoints = run/model.ckpt, run/model.ckpt\nlabels = a, b\nnfe_list = 2, 5, 20\nsamples = 64\nprojections = 16\n",
    );
    let out = dir.path().join("cmp");
    let code = strainflow("nfe-compare", &cmp, &out);
    assert!(code <= 1, "exit {code}");
    let a = read(out.join("metrics_a.csv"));
    assert_eq!(a, read(out.join("metrics_b.csv")));
    assert!(a.starts_with("nfe,l2,sw,straightness\n2,"));
    let summary: serde_json::Value = serde_json::from_str(&read(out.join("summary.json"))).unwrap();
    assert_eq!(summary["models"][1]["matches_baseline_at"], 20);

    let bounds = write_config(
        dir.path(),
        "b.ini",
        "[bounds]\nfield = checkpoint\ncheckpoint = run/model.ckpt\nn_list = 16\nsamples = 16\ngrid_n = 16\n",
    );
    let out = dir.path().join("bounds");
    assert_eq!(strainflow("bounds", &bounds, &out), 0);
    let report: serde_json::Value = serde_json::from_str(&read(out.join("bounds.json"))).unwrap();
    assert_eq!(report["fields"][0]["reports"][0]["reference"], "rk4");
}

#[test]
fn missing_checkpoint_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "n.ini",
        "[nfe-compare]\ncheckpoints = nope.ckpt\n",
    );
    let out = dir.path().join("out");
    assert_eq!(strainflow("nfe-compare", &cfg, &out), 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&read(out.join("manifest.json"))).unwrap();
    assert_eq!(manifest["exit_code"], 2);
}

#[test]
fn unknown_keys_and_sections_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "a.ini", "[train]\nepoch = 5\n");
    assert_eq!(strainflow("train", &cfg, &out), 2);
    let cfg = write_config(dir.path(), "b.ini", "[trian]\nepochs = 5\n");
    assert_eq!(strainflow("train", &cfg, &out), 2);
    let cfg = write_config(dir.path(), "c.ini", "[global]\nprecision = f32\n");
    assert_eq!(strainflow("gradcheck", &cfg, &out), 2);
}

#[test]
fn divergence_keeps_the_partial_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "t.ini",
        &format!("{TINY_TRAIN}alpha = 0.1\n").replace("lr = 3e-3", "lr = 1e200"),
    );
    let out = dir.path().join("out");
    assert_eq!(strainflow("train", &cfg, &out), 2);
    let metrics = read(out.join("metrics.csv"));
    assert!(metrics.starts_with("epoch,fm_loss,strain_sq,vort_sq,reg_total\n1,"));
    assert!(!out.join("model.ckpt").exists());
    assert!(verify_manifest(&out).unwrap().is_empty());
}

#[test]
fn gradcheck_detects_a_corrupted_partial() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_config(dir.path(), "g.ini", "[gradcheck]\nbatch = 8\nhidden = 8\n");
    assert_eq!(strainflow("gradcheck", &good, &dir.path().join("good")), 0);
    let bad = write_config(
        dir.path(),
        "b.ini",
        "[gradcheck]\nbatch = 8\nhidden = 8\ncorrupt = 1.5\n",
    );
    assert_eq!(strainflow("gradcheck", &bad, &dir.path().join("bad")), 1);
}

#[test]
fn sweep_records_rows_and_seed_override_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.ini",
        &format!("{TINY_TRAIN}\n[sweep]\nalphas = 0.5, 0\nsamples = 32\nstraightness_nfe = 10\n"),
    );
    let out = dir.path().join("s");
    let code = strainflow("sweep", &cfg, &out);
    assert!(code <= 1, "exit {code}");
    let csv = read(out.join("sweep.csv"));
    let alphas: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(alphas, ["0", "0.5"]);
    assert!(out.join("models/alpha_0.5.ckpt").exists());

    let status = Command::new(env!("CARGO_BIN_EXE_strainflow"))
        .args(["sweep", "--seed", "9", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("s9"))
        .status()
        .unwrap();
    assert!(status.code().unwrap() <= 1);
    assert_ne!(csv, read(dir.path().join("s9/sweep.csv")));
    let manifest: serde_json::Value =
        serde_json::from_str(&read(dir.path().join("s9/manifest.json"))).unwrap();
    assert_eq!(manifest["seeds"]["root"], 9);
}
