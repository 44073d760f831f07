//! Configuration, data, and persistence around the `cogd-core` solvers.

pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod pgm;
pub mod record;

use std::path::{Path, PathBuf};

pub use config::{parse_config, parse_config_with, Experiment, ExperimentConfig};
pub use error::{HarnessError, Result};
pub use experiments::{run_experiment, Outcome};

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "COGD_OUTPUT_ROOT";

/// Output directory for a run: `--output` wins over the config value,
/// which falls back to `runs/<experiment>-<seed>`. Relative paths are
/// joined onto `root` when it is given.
pub fn resolve_output_dir(
    cfg: &ExperimentConfig,
    cli: Option<&Path>,
    root: Option<&Path>,
) -> PathBuf {
    let dir = match cli {
        Some(p) => p.to_path_buf(),
        None if !cfg.output_dir.is_empty() => PathBuf::from(&cfg.output_dir),
        None => PathBuf::from("runs").join(format!("{}-{}", cfg.experiment.name(), cfg.seed)),
    };
    match root {
        Some(r) if dir.is_relative() => r.join(dir),
        _ => dir,
    }
}

/// Runs the experiment and writes its outputs to `dir`. A numeric failure
/// mid-run still persists the partial traces before it is returned.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<Outcome> {
    let mut outcome = run_experiment(cfg)?;
    if let Some(e) = &outcome.failure {
        outcome.output.summarize("failure", e);
    }
    record::write_run(dir, cfg, &outcome.output)?;
    Ok(outcome)
}
