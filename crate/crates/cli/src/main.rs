use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use strainflow_cli::{run, Command, Invocation};

/// Strain/vorticity flow-matching experiments.
#[derive(Parser)]
#[command(version, about)]
struct Args {
    command: Command,
    /// INI config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `[global] out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed; overrides `[global] seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let code = run(&Invocation {
        command: args.command,
        config: args.config,
        out: args.out,
        seed: args.seed,
    });
    ExitCode::from(code as u8)
}
