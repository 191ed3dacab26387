//! Granularity ablation: the same source rows and evaluation batches with
//! different numbers of quantile intervals.

use aqr::adaptation::Adapter;
use aqr::seed::derive_seed;

use super::{mean_std, stream, Testbed, STREAM_CALIBRATION, STREAM_EVAL, STREAM_SOURCE};
use crate::config::ExperimentConfig;
use crate::report::{line_plot, CsvReport, OutputSet, PlotStyle, Series};
use crate::CliError;

pub fn run(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<(), CliError> {
    let bed = Testbed::new(cfg)?;
    let g = &cfg.granularity;
    let adapter = Adapter::Aqr(cfg.adaptation.tail_strategy);
    let mut per_seed = CsvReport::new(&["seed", "K", "batch_size", "total_mse"]);
    let mut by_k = vec![Vec::new(); g.ks.len()];
    let mut series = Vec::new();
    for rep in 0..cfg.trials {
        let base = derive_seed(cfg.master_seed, rep as u64);
        let source = bed.inputs(cfg.adaptation.n_source, stream(base, STREAM_SOURCE))?;
        let eval = bed.inputs(cfg.eval_n, stream(base, STREAM_EVAL))?;
        let mut pts = Vec::new();
        for (i, &k) in g.ks.iter().enumerate() {
            let stats = bed.setup(source.view(), k, stream(base, STREAM_CALIBRATION))?;
            let (r, warnings) = bed.mse(&stats, eval.view(), g.batch, adapter)?;
            if rep == 0 {
                for w in warnings {
                    out.warn(format!("K = {k}: {w}"));
                }
            }
            per_seed.push(vec![rep.into(), k.into(), g.batch.into(), r.total.into()]);
            by_k[i].push(r.total);
            pts.push((k as f64, r.total));
        }
        series.push(Series::new(format!("seed {rep}"), pts));
    }
    out.write_csv("per_seed.csv", &per_seed)?;

    let mut summary = CsvReport::new(&["K", "seeds", "mean_mse", "std_mse"]);
    for (i, &k) in g.ks.iter().enumerate() {
        let (mean, sd) = mean_std(&by_k[i]);
        summary.push(vec![k.into(), by_k[i].len().into(), mean.into(), sd.into()]);
    }
    out.write_csv("summary.csv", &summary)?;
    let title = format!("AQR total MSE by granularity, batch {}", g.batch);
    out.write_svg("granularity.svg", &line_plot(&series, &PlotStyle::new(&title, "K", "total MSE").log_log()))
}
