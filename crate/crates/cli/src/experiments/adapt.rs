//! Adaptation under corruption: no adaptation, TTN, finite-sample AQR, and
//! (when closed forms exist) the exact-CDF oracle, all scored against the
//! clean forward pass.

use aqr::adaptation::{oracle_aqr_two_sided, Adapter};
use aqr::corruption::Marginal;
use aqr::special::{normal_cdf, probit};
use aqr::theory::{mse_against_reference, MseReport};
use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use super::{adapter_name, stream, Testbed, STREAM_CALIBRATION, STREAM_EVAL, STREAM_SOURCE};
use crate::config::ExperimentConfig;
use crate::report::{line_plot, CsvReport, OutputSet, PlotStyle, Series};
use crate::CliError;

/// Inversion tolerance for the corruption maps in the oracle.
const INVERT_TOL: f64 = 1e-13;

pub fn run(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<(), CliError> {
    let bed = Testbed::new(cfg)?;
    let a = &cfg.adaptation;
    let source = bed.inputs(a.n_source, stream(cfg.master_seed, STREAM_SOURCE))?;
    let stats = bed.setup(source.view(), a.k, stream(cfg.master_seed, STREAM_CALIBRATION))?;
    let eval = bed.inputs(cfg.eval_n, stream(cfg.master_seed, STREAM_EVAL))?;
    if !cfg.eval_n.is_multiple_of(a.batch_size) {
        out.warn(format!(
            "eval_n = {} is not a multiple of batch_size = {}; the last batch is smaller",
            cfg.eval_n, a.batch_size
        ));
    }

    let mut results: Vec<(String, MseReport)> = Vec::new();
    for adapter in [Adapter::Identity, Adapter::Ttn, Adapter::Aqr(a.tail_strategy)] {
        let (report, warnings) = bed.mse(&stats, eval.view(), a.batch_size, adapter)?;
        for w in warnings {
            out.warn(format!("{}: {w}", adapter_name(adapter)));
        }
        results.push((adapter_name(adapter), report));
    }
    match oracle_mse(&bed, cfg, eval.view())? {
        Some(r) => results.push(("oracle".into(), r)),
        None => out.warn("oracle skipped: it needs one hidden layer and standard-normal inputs"),
    }

    let mut summary = CsvReport::new(&["method", "n_eval", "batch_size", "total_mse"]);
    let mut per_neuron = CsvReport::new(&["method", "neuron", "mse"]);
    for (name, r) in &results {
        let batch = if name == "oracle" { r.n_eval } else { a.batch_size.min(r.n_eval) };
        summary.push(vec![name.as_str().into(), r.n_eval.into(), batch.into(), r.total.into()]);
        for (i, &v) in r.per_neuron.iter().enumerate() {
            per_neuron.push(vec![name.as_str().into(), i.into(), v.into()]);
        }
    }
    out.write_csv("mse_summary.csv", &summary)?;
    out.write_csv("mse_per_neuron.csv", &per_neuron)?;

    let series: Vec<Series> = results
        .iter()
        .map(|(name, r)| {
            Series::new(
                name.clone(),
                r.per_neuron.iter().enumerate().map(|(i, &v)| (i as f64, v.max(1e-300))).collect(),
            )
        })
        .collect();
    let mut style = PlotStyle::new("Per-neuron MSE after adaptation", "neuron", "MSE");
    style.log_y = true;
    out.write_svg("mse_per_neuron.svg", &line_plot(&series, &style))
}

/// Exact-CDF recovery. Each pre-activation of a single hidden layer fed
/// standard-normal inputs is `N(b_i, ‖W_i‖²)`; the target CDF is that law
/// pulled back through the corruption.
fn oracle_mse(bed: &Testbed, cfg: &ExperimentConfig, eval: ArrayView2<'_, f64>) -> Result<Option<MseReport>, CliError> {
    if cfg.network.depth != 1 || cfg.source.marginal != Marginal::StandardNormal {
        return Ok(None);
    }
    let layer = &bed.net.layers()[0];
    let specs = cfg.corruption.per_channel(cfg.network.m);
    let clean_pre = bed.net.forward_plain(eval)?.captures.remove(0).pre_activations;
    let columns = (0..clean_pre.ncols())
        .into_par_iter()
        .map(|c| {
            let b = layer.bias[c];
            let s = layer.weights.row(c).iter().map(|w| w * w).sum::<f64>().sqrt();
            let g = &specs[c];
            clean_pre
                .column(c)
                .iter()
                .map(|&a| {
                    let z = g.apply(a);
                    let pre = g.invert(z, INVERT_TOL).map(|x| (x - b) / s)?;
                    let q = |u: f64| probit(u).map(|p| b + s * p).unwrap_or(f64::NAN);
                    let upper = |u: f64| probit(u).map(|p| b - s * p).unwrap_or(f64::NAN);
                    Ok(oracle_aqr_two_sided(z, q, upper, |_| normal_cdf(pre), |_| normal_cdf(-pre)))
                })
                .collect::<Result<Vec<f64>, aqr::Error>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let act = layer.activation;
    let recovered = Array2::from_shape_fn(clean_pre.dim(), |(r, c)| act.apply(columns[c][r]));
    let clean = clean_pre.mapv(|v| act.apply(v));
    Ok(Some(mse_against_reference(recovered.view(), clean.view())?))
}
