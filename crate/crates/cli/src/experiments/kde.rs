//! Shape preservation on a one-dimensional multimodal source: source,
//! corrupted, TTN-adapted and AQR-adapted values compared by moments and
//! kernel density estimates.

use aqr::adaptation::{adapt_batch_shifted, Adapter};
use aqr::corruption::{sample_source, PreActivationShift, SourceSpec};
use aqr::net::{Activation, HookId, LayerSpec, Network};
use aqr::quantile::compute_quantile_profile;
use ndarray::{array, Array2};

use super::{stream, STREAM_CALIBRATION, STREAM_EVAL, STREAM_SOURCE};
use crate::config::ExperimentConfig;
use crate::report::{line_plot, CsvReport, OutputSet, PlotStyle, Series};
use crate::CliError;

/// Mean, standard deviation, skewness and excess kurtosis.
pub fn moments(x: &[f64]) -> [f64; 4] {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let central = |p: i32| x.iter().map(|v| (v - mean).powi(p)).sum::<f64>() / n;
    let var = central(2);
    [mean, var.sqrt(), central(3) / var.powf(1.5), central(4) / (var * var) - 3.0]
}

/// Gaussian kernel density estimate with Silverman's bandwidth.
pub fn kde(samples: &[f64], grid: &[f64]) -> Vec<f64> {
    let n = samples.len() as f64;
    let [_, sd, _, _] = moments(samples);
    let profile = compute_quantile_profile(samples, 4).expect("at least two samples");
    let iqr = profile.knots()[3] - profile.knots()[1];
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = (0.9 * spread * n.powf(-0.2)).max(f64::MIN_POSITIVE);
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&g| samples.iter().map(|&s| (-0.5 * ((g - s) / h).powi(2)).exp()).sum::<f64>() * norm)
        .collect()
}

pub fn run(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<(), CliError> {
    let k = &cfg.kde;
    let hook = HookId::new("h0");
    let layer = LayerSpec::new(array![[1.0]], array![0.0], Activation::Identity, Some(hook.clone()))?;
    let net: Network<f64> = Network::new(vec![layer])?;
    let draw = |seed: u64| -> Result<Array2<f64>, CliError> {
        Ok(sample_source(&SourceSpec::iid(k.marginal.clone(), 1, seed)?, k.n)?)
    };
    let source = draw(stream(cfg.master_seed, STREAM_SOURCE))?;
    let stats = aqr::setup_phase(
        &net,
        &[source.view()],
        &cfg.adaptation.core(stream(cfg.master_seed, STREAM_CALIBRATION)),
    )?;
    let clean = draw(stream(cfg.master_seed, STREAM_EVAL))?;
    let shift = PreActivationShift::none().with_hook(hook, vec![k.corruption.clone()])?;
    let adapted = |adapter| -> Result<Vec<f64>, CliError> {
        let (_, d) = adapt_batch_shifted(&net, &stats, clean.view(), &shift, adapter)?;
        Ok(d.hooks[0].adapted.column(0).to_vec())
    };
    let dists: Vec<(&str, Vec<f64>)> = vec![
        ("source", clean.column(0).to_vec()),
        ("corrupted", adapted(Adapter::Identity)?),
        ("ttn", adapted(Adapter::Ttn)?),
        ("aqr", adapted(Adapter::Aqr(cfg.adaptation.tail_strategy))?),
    ];

    let mut table = CsvReport::new(&["distribution", "mean", "std", "skewness", "excess_kurtosis"]);
    for (name, x) in &dists {
        let m = moments(x);
        table.push(vec![(*name).into(), m[0].into(), m[1].into(), m[2].into(), m[3].into()]);
    }
    out.write_csv("moments.csv", &table)?;

    // Grid over the source's bulk, widened by a quarter on each side.
    let p = compute_quantile_profile(&dists[0].1, 1000)?;
    let (lo, hi) = (p.knots()[1], p.knots()[999]);
    let pad = 0.25 * (hi - lo);
    let grid: Vec<f64> = (0..k.grid)
        .map(|i| lo - pad + (hi - lo + 2.0 * pad) * i as f64 / (k.grid - 1) as f64)
        .collect();
    let densities: Vec<Vec<f64>> = dists.iter().map(|(_, x)| kde(x, &grid)).collect();
    let mut density = CsvReport::new(&["x", "source", "corrupted", "ttn", "aqr"]);
    for (i, &x) in grid.iter().enumerate() {
        let mut row = vec![x.into()];
        row.extend(densities.iter().map(|d| d[i].into()));
        density.push(row);
    }
    out.write_csv("density.csv", &density)?;
    let series: Vec<Series> = dists
        .iter()
        .zip(&densities)
        .map(|((name, _), d)| Series::new(*name, grid.iter().copied().zip(d.iter().copied()).collect()))
        .collect();
    out.write_svg(
        "density.svg",
        &line_plot(&series, &PlotStyle::new("Densities before and after adaptation", "value", "density")),
    )
}
