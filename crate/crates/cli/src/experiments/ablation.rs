//! Tail-strategy ablation: every strategy on the same statistics and
//! evaluation rows, for each evaluation batch size and seed.

use aqr::adaptation::Adapter;
use aqr::seed::derive_seed;
use aqr::tails::TailStrategy;

use super::{adapter_name, mean_std, stream, Testbed, STREAM_CALIBRATION, STREAM_EVAL, STREAM_SOURCE};
use crate::config::ExperimentConfig;
use crate::report::{box_plot, CsvReport, OutputSet};
use crate::CliError;

pub fn run(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<(), CliError> {
    let mut cfg = cfg.clone();
    // Calibrated tails are needed for the average-sample-tails strategy.
    cfg.adaptation.tail_strategy = TailStrategy::AverageSampleTails;
    let bed = Testbed::new(&cfg)?;
    let adapters: Vec<Adapter> = TailStrategy::ALL
        .iter()
        .map(|&s| Adapter::Aqr(s))
        .chain([Adapter::Ttn, Adapter::Identity])
        .collect();

    let mut per_seed = CsvReport::new(&["seed", "batch_size", "method", "total_mse"]);
    // results[batch][adapter][seed]
    let mut results = vec![vec![Vec::new(); adapters.len()]; cfg.ablation.batch_sizes.len()];
    for rep in 0..cfg.trials {
        let base = derive_seed(cfg.master_seed, rep as u64);
        let source = bed.inputs(cfg.adaptation.n_source, stream(base, STREAM_SOURCE))?;
        let stats = bed.setup(source.view(), cfg.adaptation.k, stream(base, STREAM_CALIBRATION))?;
        let eval = bed.inputs(cfg.eval_n, stream(base, STREAM_EVAL))?;
        for (bi, &batch) in cfg.ablation.batch_sizes.iter().enumerate() {
            for (ai, &adapter) in adapters.iter().enumerate() {
                let (r, _) = bed.mse(&stats, eval.view(), batch, adapter)?;
                per_seed.push(vec![rep.into(), batch.into(), adapter_name(adapter).into(), r.total.into()]);
                results[bi][ai].push(r.total);
            }
        }
    }
    out.write_csv("per_seed.csv", &per_seed)?;

    let mut summary = CsvReport::new(&["batch_size", "method", "seeds", "mean_mse", "std_mse", "min_mse", "max_mse"]);
    for (bi, &batch) in cfg.ablation.batch_sizes.iter().enumerate() {
        for (ai, &adapter) in adapters.iter().enumerate() {
            let v = &results[bi][ai];
            let (mean, sd) = mean_std(v);
            summary.push(vec![
                batch.into(),
                adapter_name(adapter).into(),
                v.len().into(),
                mean.into(),
                sd.into(),
                v.iter().copied().fold(f64::INFINITY, f64::min).into(),
                v.iter().copied().fold(f64::NEG_INFINITY, f64::max).into(),
            ]);
        }
        let groups: Vec<(String, Vec<f64>)> = TailStrategy::ALL
            .iter()
            .enumerate()
            .map(|(ai, s)| (s.name().to_string(), results[bi][ai].iter().map(|v| v.log10()).collect()))
            .collect();
        out.write_svg(
            &format!("ablation_batch{batch}.svg"),
            &box_plot(&groups, &format!("Tail strategies, batch {batch}"), "log10 total MSE"),
        )?;
    }
    out.write_csv("summary.csv", &summary)
}
