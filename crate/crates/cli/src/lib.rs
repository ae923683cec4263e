//! Command-line driver: configuration, experiment orchestration and result
//! files for the strain/vorticity flow-matching experiments.
//!
//! Every command reads one INI config, writes CSV/JSON artifacts into an
//! output directory and finishes with a `manifest.json` listing the
//! SHA-256 digest of each artifact.

pub mod commands;
pub mod config;
pub mod output;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::ValueEnum;
use strainflow_core::rng::stream_seed;

use config::{Config, GLOBAL, GLOBAL_KEYS};
use output::{write_manifest, OutputDir, RunManifest};

/// Caps the rayon worker count when set to a positive integer.
pub const THREADS_ENV: &str = "STRAINFLOW_THREADS";

pub const EXIT_PASS: i32 = 0;
pub const EXIT_PREDICATE_FAILED: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] strainflow_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    VerifyOt,
    Train,
    Sweep,
    NfeCompare,
    Bounds,
    Gradcheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::VerifyOt => "verify-ot",
            Command::Train => "train",
            Command::Sweep => "sweep",
            Command::NfeCompare => "nfe-compare",
            Command::Bounds => "bounds",
            Command::Gradcheck => "gradcheck",
        }
    }
}

/// One parsed command line.
#[derive(Clone, Debug)]
pub struct Invocation {
    pub command: Command,
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// State shared by a running command.
pub struct Context {
    pub config: Config,
    pub seed: u64,
    pub out: OutputDir,
    seeds: BTreeMap<String, u64>,
    notes: BTreeMap<String, String>,
}

impl Context {
    /// Records the derived seed of a named stream in the manifest.
    pub fn use_stream(&mut self, name: &str) {
        self.seeds
            .insert(name.to_string(), stream_seed(self.seed, name));
    }

    pub fn note(&mut self, key: &str, value: impl Into<String>) {
        self.notes.insert(key.to_string(), value.into());
    }
}

/// Allowed keys of every config section.
fn allowed_keys(section: &str) -> &'static [&'static str] {
    match section {
        GLOBAL => &GLOBAL_KEYS,
        "verify-ot" => commands::verify_ot::KEYS,
        "train" => commands::train::KEYS,
        "sweep" => commands::sweep::KEYS,
        "nfe-compare" => commands::nfe::KEYS,
        "bounds" => commands::bounds::KEYS,
        "gradcheck" => commands::gradcheck::KEYS,
        _ => &[],
    }
}

fn prepare(inv: &Invocation) -> Result<(Config, u64, PathBuf), CliError> {
    let mut config = Config::load(&inv.config)?;
    for section in config::SECTIONS {
        config.check_keys(section, allowed_keys(section))?;
    }
    if let Some(seed) = inv.seed {
        config.set(GLOBAL, "seed", seed.to_string());
    }
    let global = config.section(GLOBAL);
    let precision: String = global.get_or("precision", "f64".to_string())?;
    if precision != "f64" {
        return Err(CliError::Config(format!(
            "precision `{precision}` is not supported (only f64)"
        )));
    }
    let seed: u64 = global.get_or("seed", 0)?;
    let out = match &inv.out {
        Some(dir) => dir.clone(),
        None => config
            .base_dir()
            .join(global.raw("out_dir").unwrap_or("out")),
    };
    Ok((config, seed, out))
}

fn limit_threads() {
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if n > 0 {
            // Fails only if a pool already exists, which is harmless.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
}

/// Runs one command and returns its exit code: 0 when every predicate of
/// the command holds, 1 when one fails and 2 on an error.
pub fn run(inv: &Invocation) -> i32 {
    limit_threads();
    let started = Instant::now();
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let (config, seed, out_dir) = match prepare(inv) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    let out = match OutputDir::create(&out_dir) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: cannot create {}: {e}", out_dir.display());
            return EXIT_ERROR;
        }
    };
    let mut ctx = Context {
        config,
        seed,
        out,
        seeds: BTreeMap::from([("root".to_string(), seed)]),
        notes: BTreeMap::new(),
    };
    let result = match inv.command {
        Command::VerifyOt => commands::verify_ot::run(&mut ctx),
        Command::Train => commands::train::run(&mut ctx),
        Command::Sweep => commands::sweep::run(&mut ctx),
        Command::NfeCompare => commands::nfe::run(&mut ctx),
        Command::Bounds => commands::bounds::run(&mut ctx),
        Command::Gradcheck => commands::gradcheck::run(&mut ctx),
    };
    let (exit_code, error) = match result {
        Ok(true) => (EXIT_PASS, None),
        Ok(false) => (EXIT_PREDICATE_FAILED, None),
        Err(e) => {
            eprintln!("error: {e}");
            (EXIT_ERROR, Some(e.to_string()))
        }
    };
    let manifest = RunManifest {
        command: inv.command.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: ctx.config.echo().clone(),
        seeds: ctx.seeds,
        started_unix,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        exit_code,
        error,
        notes: ctx.notes,
        outputs: ctx.out.files().to_vec(),
    };
    if let Err(e) = write_manifest(ctx.out.root(), &manifest) {
        eprintln!("error: cannot write manifest: {e}");
        return EXIT_ERROR;
    }
    exit_code
}
