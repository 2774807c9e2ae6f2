//! Configuration loading, scenario runs and result files for the
//! `simulate` binary.

pub mod config;
mod run;

use std::path::PathBuf;

use thiserror::Error;

pub use config::{load_config, resolve, ExperimentConfig, NoiseSource, Overrides, ResolvedConfig};
pub use run::{run_scenario, write_outputs, ResultBundle, RuntimeInfo, BUNDLE_FILE, COUNTS_FILE};

/// Environment variable naming the output directory when `--out` is absent.
pub const OUT_DIR_ENV: &str = "TIMEBIN_OUT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },

    #[error("cannot parse {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },

    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },

    #[error("simulation failed: {0}")]
    Runtime(#[from] timebin_core::Error),

    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 1 for anything wrong with the configuration, 2 for failures after it
    /// was accepted.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Read { .. } | CliError::Parse { .. } | CliError::Invalid { .. } => 1,
            CliError::Runtime(_) | CliError::Write { .. } => 2,
        }
    }
}
