use std::fs;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use timebin_core::montecarlo::counts_csv;
use timebin_core::scenario::run_scenario as run_spec;
use timebin_core::{CountsTable, Derived, SeedPolicy};

use crate::config::{ExperimentConfig, ResolvedConfig};
use crate::CliError;

pub const BUNDLE_FILE: &str = "result.json";
pub const COUNTS_FILE: &str = "counts.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeInfo {
    pub version: String,
    pub started_unix_s: u64,
    pub elapsed_s: f64,
    pub available_threads: usize,
}

/// Everything one run produced. `config` alone is enough to repeat it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub config: ExperimentConfig,
    /// Noise preset the configuration named, if any.
    pub preset: Option<String>,
    pub derived: Derived,
    pub counts: Vec<CountsTable>,
    pub runtime: RuntimeInfo,
}

pub fn run_scenario(config: &ResolvedConfig) -> Result<ResultBundle, CliError> {
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let output = run_spec(&config.spec, &SeedPolicy::new(config.master_seed))?;
    Ok(ResultBundle {
        config: config.echo(),
        preset: config.preset.map(|p| p.name().to_string()),
        derived: output.derived,
        counts: output.counts,
        runtime: RuntimeInfo {
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_s: started,
            elapsed_s: clock.elapsed().as_secs_f64(),
            available_threads: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        },
    })
}

/// Writes the bundle as JSON and the counts as CSV into `dir`.
pub fn write_outputs(bundle: &ResultBundle, dir: &Path) -> Result<(), CliError> {
    let write_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Write { path, source }
    };
    fs::create_dir_all(dir).map_err(write_err(dir))?;
    let json = serde_json::to_string_pretty(bundle).expect("bundle serializes");
    let bundle_path = dir.join(BUNDLE_FILE);
    fs::write(&bundle_path, json + "\n").map_err(write_err(&bundle_path))?;
    let counts_path = dir.join(COUNTS_FILE);
    fs::write(&counts_path, counts_csv(&bundle.counts)).map_err(write_err(&counts_path))
}
