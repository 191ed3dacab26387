//! Small-batch knot deviations from a large reference profile, repeated
//! under independent seeds.

use aqr::seed::derive_seed;
use aqr::theory::tail_deviation_experiment;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::report::{box_plot, CsvReport, OutputSet};
use crate::CliError;

/// Levels shown in the box plot, as fractions of K.
const PLOT_LEVELS: [f64; 9] = [0.0, 0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99, 1.0];

pub fn run(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<(), CliError> {
    let d = &cfg.deviation;
    let spec = cfg.source.spec(1, 0)?;
    let reps = (0..cfg.trials)
        .into_par_iter()
        .map(|rep| {
            Ok(tail_deviation_experiment(
                d.reference_n,
                d.small_n,
                d.batches,
                &spec,
                d.k,
                derive_seed(cfg.master_seed, rep as u64),
            )?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut raw = CsvReport::new(&["repetition", "batch", "level", "deviation"]);
    let mut levels = CsvReport::new(&["repetition", "level", "reference_knot", "mean_deviation", "mean_abs_deviation"]);
    let mut tails = CsvReport::new(&[
        "repetition",
        "mean_deviation_min",
        "mean_deviation_max",
        "mean_abs_deviation_min",
        "mean_abs_deviation_mid",
        "mean_abs_deviation_max",
    ]);
    for (rep, dev) in reps.iter().enumerate() {
        for (level, row) in dev.deviations.iter().enumerate() {
            for (b, &v) in row.iter().enumerate() {
                raw.push(vec![rep.into(), b.into(), level.into(), v.into()]);
            }
            levels.push(vec![
                rep.into(),
                level.into(),
                dev.reference.knots()[level].into(),
                dev.mean_at(level).into(),
                dev.mean_abs_at(level).into(),
            ]);
        }
        tails.push(vec![
            rep.into(),
            dev.mean_at(0).into(),
            dev.mean_at(d.k).into(),
            dev.mean_abs_at(0).into(),
            dev.mean_abs_at(d.k / 2).into(),
            dev.mean_abs_at(d.k).into(),
        ]);
    }
    out.write_csv("deviations.csv", &raw)?;
    out.write_csv("levels.csv", &levels)?;
    out.write_csv("tails.csv", &tails)?;

    let first = &reps[0];
    let mut groups: Vec<(String, Vec<f64>)> = PLOT_LEVELS
        .iter()
        .map(|u| {
            let j = (u * d.k as f64).round() as usize;
            (format!("p{j}"), first.deviations[j].clone())
        })
        .collect();
    groups.dedup_by(|a, b| a.0 == b.0);
    let title = format!("Knot deviation, batch {} vs reference {}", d.small_n, d.reference_n);
    out.write_svg("deviation.svg", &box_plot(&groups, &title, "small-batch minus reference"))
}
