//! Experiment runner behind the `aqr` binary.
//!
//! Each experiment reads an [`ExperimentConfig`], writes CSV reports and SVG
//! plots into the output directory, and finishes with a manifest listing
//! every file and its SHA-256. CSV bytes depend only on the config and the
//! master seed.

pub mod config;
pub mod experiments;
pub mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

pub use config::{Experiment, ExperimentConfig};
pub use report::{CsvReport, ManifestEntry, OutputSet};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad config or arguments; exit code 1.
    #[error("validation error: {0}")]
    Validation(String),
    /// Failure while running; exit code 2.
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn context(self, ctx: &str) -> Self {
        match self {
            CliError::Validation(m) => CliError::Validation(format!("{ctx}: {m}")),
            CliError::Runtime(m) => CliError::Runtime(format!("{ctx}: {m}")),
        }
    }
}

impl From<aqr::Error> for CliError {
    fn from(e: aqr::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    experiment: &'a str,
    master_seed: u64,
    version: &'a str,
    elapsed_seconds: f64,
    warnings: &'a [String],
}

/// Loads the config at `path`, applies overrides, and runs `experiment`.
pub fn run_from_path(experiment: Experiment, path: &Path, overrides: &Overrides) -> Result<Vec<ManifestEntry>, CliError> {
    let cfg = ExperimentConfig::from_path(path)?;
    run(experiment, cfg, overrides)
}

/// Runs one experiment and returns the manifest entries.
///
/// Besides the experiment's own files the output holds `config.toml` (the
/// resolved config), `run.json` (timing and warnings) and `manifest.json`.
pub fn run(experiment: Experiment, mut cfg: ExperimentConfig, overrides: &Overrides) -> Result<Vec<ManifestEntry>, CliError> {
    if let Some(out) = &overrides.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = overrides.seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    cfg.check_experiment(experiment)?;
    cfg.experiment = Some(experiment);

    let start = Instant::now();
    let mut out = OutputSet::create(&cfg.output_dir)?;
    out.write_bytes("config.toml", cfg.to_toml().as_bytes())?;
    experiments::dispatch(experiment, &cfg, &mut out).map_err(|e| e.context(experiment.name()))?;
    let warnings = out.warnings().to_vec();
    out.write_json(
        "run.json",
        &RunRecord {
            experiment: experiment.name(),
            master_seed: cfg.master_seed,
            version: env!("CARGO_PKG_VERSION"),
            elapsed_seconds: start.elapsed().as_secs_f64(),
            warnings: &warnings,
        },
    )?;
    out.finish()
}
