//! The seven experiments and the testbed they share.
//!
//! Seeds: every random stream is `derive_seed(master or repetition seed,
//! stream)` so results do not depend on execution order or thread count.

mod ablation;
mod adapt;
mod deviation;
mod granularity;
mod kde;
mod setup;
mod theory;

use aqr::adaptation::{adapt_batch_shifted, setup_phase, Adapter, SourceStatistics};
use aqr::corruption::{sample_source, PreActivationShift};
use aqr::net::{Activation, HookId, Network};
use aqr::seed::derive_seed;
use aqr::theory::{mse_against_reference, MseReport};
use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::config::{Experiment, ExperimentConfig};
use crate::report::OutputSet;
use crate::CliError;

pub(crate) const STREAM_SOURCE: u64 = 1;
pub(crate) const STREAM_EVAL: u64 = 2;
pub(crate) const STREAM_CALIBRATION: u64 = 3;

pub fn dispatch(experiment: Experiment, cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<(), CliError> {
    match experiment {
        Experiment::Setup => setup::run(cfg, out),
        Experiment::Adapt => adapt::run(cfg, out),
        Experiment::TheoryRates => theory::run(cfg, out),
        Experiment::TailAblation => ablation::run(cfg, out),
        Experiment::TailDeviation => deviation::run(cfg, out),
        Experiment::KdeDemo => kde::run(cfg, out),
        Experiment::Granularity => granularity::run(cfg, out),
    }
}

/// The configured network with its corruption on the first hidden layer.
/// MSE is measured on the post-activations of the deepest hidden layer.
pub(crate) struct Testbed {
    pub net: Network<f64>,
    pub shift: PreActivationShift<f64>,
    pub last_hook: HookId,
    pub last_activation: Activation,
    cfg: ExperimentConfig,
}

impl Testbed {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let net = cfg.network.build()?;
        let hooks = net.hooks();
        let first_hook = hooks[0].clone();
        let last_hook = hooks[hooks.len() - 1].clone();
        let last_activation = net
            .layers()
            .iter()
            .find(|l| l.hook.as_ref() == Some(&last_hook))
            .map(|l| l.activation)
            .expect("hooked layer exists");
        let shift = PreActivationShift::none().with_hook(first_hook.clone(), cfg.corruption.per_channel(cfg.network.m))?;
        Ok(Self {
            net,
            shift,
            last_hook,
            last_activation,
            cfg: cfg.clone(),
        })
    }

    /// `n` input rows drawn from the configured source.
    pub fn inputs(&self, n: usize, seed: u64) -> Result<Array2<f64>, CliError> {
        Ok(sample_source(&self.cfg.source.spec(self.cfg.network.d, seed)?, n)?)
    }

    /// Setup phase on `source` with `k` intervals and the configured tail
    /// settings; `calibration_seed` drives tail calibration.
    pub fn setup(
        &self,
        source: ArrayView2<'_, f64>,
        k: usize,
        calibration_seed: u64,
    ) -> Result<SourceStatistics<f64>, CliError> {
        let mut core = self.cfg.adaptation.core(calibration_seed);
        core.k = k;
        Ok(setup_phase(&self.net, &[source], &core)?)
    }

    /// Clean post-activations of the deepest hidden layer.
    pub fn clean(&self, batch: ArrayView2<'_, f64>) -> Result<Array2<f64>, CliError> {
        let pass = self.net.forward_plain(batch)?;
        let cap = pass
            .captures
            .into_iter()
            .find(|c| c.hook_id == self.last_hook)
            .expect("hook captured");
        let act = self.last_activation;
        Ok(cap.pre_activations.mapv(|v| act.apply(v)))
    }

    /// Corrupted and adapted post-activations of the deepest hidden layer,
    /// plus adaptation warnings.
    pub fn adapted(
        &self,
        stats: &SourceStatistics<f64>,
        batch: ArrayView2<'_, f64>,
        adapter: Adapter,
    ) -> Result<(Array2<f64>, Vec<String>), CliError> {
        let (_, diag) = adapt_batch_shifted(&self.net, stats, batch, &self.shift, adapter)?;
        let act = self.last_activation;
        let hook = diag.hook(&self.last_hook).expect("hook adapted");
        Ok((hook.adapted.mapv(|v| act.apply(v)), diag.warnings.clone()))
    }

    /// MSE of `adapter` over `eval`, adapting `batch_size` rows at a time.
    /// A trailing chunk of fewer than two rows is dropped.
    pub fn mse(
        &self,
        stats: &SourceStatistics<f64>,
        eval: ArrayView2<'_, f64>,
        batch_size: usize,
        adapter: Adapter,
    ) -> Result<(MseReport, Vec<String>), CliError> {
        let chunks: Vec<ArrayView2<'_, f64>> = eval
            .axis_chunks_iter(Axis(0), batch_size)
            .filter(|c| c.nrows() >= 2)
            .collect();
        let parts = chunks
            .par_iter()
            .map(|c| Ok((self.adapted(stats, *c, adapter)?, self.clean(*c)?)))
            .collect::<Result<Vec<_>, CliError>>()?;
        let mut warnings: Vec<String> = parts.iter().flat_map(|((_, w), _)| w.iter().cloned()).collect();
        warnings.dedup();
        let adapted: Vec<_> = parts.iter().map(|((a, _), _)| a.view()).collect();
        let clean: Vec<_> = parts.iter().map(|(_, c)| c.view()).collect();
        let (adapted, clean) = (
            concatenate(Axis(0), &adapted).map_err(|e| CliError::Runtime(e.to_string()))?,
            concatenate(Axis(0), &clean).map_err(|e| CliError::Runtime(e.to_string()))?,
        );
        Ok((mse_against_reference(adapted.view(), clean.view())?, warnings))
    }
}

/// Seed for stream `stream` under `base`.
pub(crate) fn stream(base: u64, stream: u64) -> u64 {
    derive_seed(base, stream)
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

pub(crate) fn adapter_name(adapter: Adapter) -> String {
    match adapter {
        Adapter::Aqr(s) => format!("aqr-{}", s.name()),
        Adapter::Ttn => "ttn".into(),
        Adapter::Identity => "none".into(),
    }
}
