//! Helpers for the acceptance suite: running an experiment into a directory,
//! reading its CSV reports, and tallying pass/fail lines.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use aqr_cli::{run, Experiment, ExperimentConfig, Overrides};

/// Parses `text` as a config and runs `experiment` into `dir/name`.
/// Returns the output directory and the wall time.
pub fn run_experiment(
    dir: &Path,
    name: &str,
    experiment: Experiment,
    config: &str,
    seed: u64,
) -> Result<(PathBuf, Duration), String> {
    let cfg = ExperimentConfig::parse(config).map_err(|e| e.to_string())?;
    let out = dir.join(name);
    let overrides = Overrides {
        out: Some(out.clone()),
        seed: Some(seed),
    };
    let start = Instant::now();
    run(experiment, cfg, &overrides).map_err(|e| e.to_string())?;
    Ok((out, start.elapsed()))
}

/// One CSV row keyed by column name.
pub type Row = HashMap<String, String>;

pub fn read_csv(path: &Path) -> Result<Vec<Row>, String> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let header = reader.headers().map_err(|e| e.to_string())?.clone();
    reader
        .records()
        .map(|r| {
            let r = r.map_err(|e| e.to_string())?;
            Ok(header.iter().map(String::from).zip(r.iter().map(String::from)).collect())
        })
        .collect()
}

pub fn num(row: &Row, column: &str) -> f64 {
    row.get(column)
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| panic!("column `{column}` missing or not numeric in {row:?}"))
}

/// Collects criterion outcomes and prints one line per criterion.
#[derive(Debug, Default)]
pub struct Tally {
    results: Vec<(String, bool)>,
}

impl Tally {
    pub fn record(&mut self, id: &str, pass: bool, detail: &str) {
        println!("{} criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.results.push((id.to_owned(), pass));
    }

    /// Records an error that prevented a criterion from being measured.
    pub fn error(&mut self, id: &str, err: &str) {
        self.record(id, false, &format!("could not be measured: {err}"));
    }

    pub fn failed(&self) -> Vec<&str> {
        self.results.iter().filter(|r| !r.1).map(|r| r.0.as_str()).collect()
    }

    pub fn summary(&self) -> String {
        let failed = self.failed();
        format!(
            "{} of {} criteria passed{}",
            self.results.len() - failed.len(),
            self.results.len(),
            if failed.is_empty() {
                String::new()
            } else {
                format!("; failed: {}", failed.join(", "))
            }
        )
    }
}
