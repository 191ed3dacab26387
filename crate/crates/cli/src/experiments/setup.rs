//! Setup phase: record source statistics and tabulate the profiles.

use aqr::adaptation::statistics_to_json;

use super::{stream, Testbed, STREAM_CALIBRATION, STREAM_SOURCE};
use crate::config::ExperimentConfig;
use crate::report::{line_plot, Cell, CsvReport, OutputSet, PlotStyle, Series};
use crate::CliError;

pub fn run(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<(), CliError> {
    let bed = Testbed::new(cfg)?;
    let a = &cfg.adaptation;
    let source = bed.inputs(a.n_source, stream(cfg.master_seed, STREAM_SOURCE))?;
    let stats = bed.setup(source.view(), a.k, stream(cfg.master_seed, STREAM_CALIBRATION))?;
    out.write_bytes("statistics.json", statistics_to_json(&stats)?.as_bytes())?;

    let mut profiles = CsvReport::new(&["hook", "channel", "level", "u", "knot"]);
    let mut channels = CsvReport::new(&["hook", "channel", "mean", "std", "calibrated_low", "calibrated_high"]);
    for h in &stats.hooks {
        for (c, ch) in h.channels.iter().enumerate() {
            for (j, &knot) in ch.profile.knots().iter().enumerate() {
                profiles.push(vec![
                    h.hook_id.as_str().into(),
                    c.into(),
                    j.into(),
                    ch.profile.level(j).into(),
                    knot.into(),
                ]);
            }
            let (lo, hi): (Cell, Cell) = match ch.calibrated_tails {
                Some(t) => (t.low.into(), t.high.into()),
                None => ("".into(), "".into()),
            };
            channels.push(vec![h.hook_id.as_str().into(), c.into(), ch.mean.into(), ch.std.into(), lo, hi]);
        }
    }
    out.write_csv("profiles.csv", &profiles)?;
    out.write_csv("channels.csv", &channels)?;

    let first = &stats.hooks[0];
    let series: Vec<Series> = first
        .channels
        .iter()
        .enumerate()
        .map(|(c, ch)| {
            let pts = ch
                .profile
                .knots()
                .iter()
                .enumerate()
                .map(|(j, &k)| (ch.profile.level(j), k))
                .collect();
            Series::new(format!("channel {c}"), pts)
        })
        .collect();
    let title = format!("Source quantile functions at {}", first.hook_id);
    out.write_svg("profiles.svg", &line_plot(&series, &PlotStyle::new(&title, "level u", "knot")))
}
