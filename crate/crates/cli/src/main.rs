use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use timebin_cli::{config, run_scenario, write_outputs, CliError, ExperimentConfig, Overrides, OUT_DIR_ENV};
use timebin_core::ScenarioKind;

/// Simulate one of the named experiments and write its counts and results.
#[derive(Debug, Parser)]
#[command(name = "simulate", version)]
struct Args {
    /// rabi-scan, prep-verify, entangle-scan, chsh or efficiency-budget
    scenario: ScenarioKind,

    /// TOML configuration (or a JSON echo taken from a previous result)
    #[arg(long)]
    config: Option<PathBuf>,

    /// Master seed; overrides the config
    #[arg(long)]
    seed: Option<u64>,

    /// Shots per grid point and settings pair; overrides the config
    #[arg(long)]
    shots: Option<u64>,

    #[arg(long, env = OUT_DIR_ENV, default_value = "results")]
    out: PathBuf,
}

fn run(args: Args) -> Result<PathBuf, CliError> {
    let file = match &args.config {
        Some(path) => config::read_config(path)?,
        None => ExperimentConfig::default(),
    };
    let overrides = Overrides { scenario: Some(args.scenario), master_seed: args.seed, shots: args.shots };
    let resolved = config::resolve(file, &overrides)?;
    let bundle = run_scenario(&resolved)?;
    write_outputs(&bundle, &args.out)?;
    Ok(args.out)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(args) {
        Ok(dir) => {
            println!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
