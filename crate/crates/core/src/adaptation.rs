//! The two-phase protocol: record source statistics once, then recalibrate
//! every test batch independently. TTN and the exact-CDF oracle live here too
//! so the three maps can be compared on equal footing.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use sha2::{Digest, Sha256};

use crate::corruption::PreActivationShift;
use crate::error::{Error, Result};
use crate::net::{select_hooks, HookId, LayerPolicy, Network};
use crate::quantile::{compute_quantile_profile, QuantileProfile};
use crate::seed::derive_seed2;
use crate::tails::{calibrate_average_sample_tails, GaussianFit, SampledTailEstimate, TailRule, TailStrategy};
use crate::transform::QuantileMap;
use crate::Scalar;

/// Version written to and required from statistics files.
pub const STATISTICS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationConfig {
    /// Number of quantile intervals; profiles carry `K + 1` knots.
    #[serde(rename = "K")]
    pub k: usize,
    pub tail_strategy: TailStrategy,
    pub layer_policy: LayerPolicy,
    pub batch_size: usize,
    pub tail_batch: usize,
    pub tail_repeats: usize,
    pub rng_seed: u64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            k: 100,
            tail_strategy: TailStrategy::AverageSampleTails,
            layer_policy: LayerPolicy::All,
            batch_size: 128,
            tail_batch: 100,
            tail_repeats: 1_000,
            rng_seed: 0,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidArgument("K must be ≥ 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument(format!(
                "batch_size must be ≥ 2, got {}",
                self.batch_size
            )));
        }
        if self.tail_batch < 2 {
            return Err(Error::InvalidArgument(format!(
                "tail_batch must be ≥ 2, got {}",
                self.tail_batch
            )));
        }
        if self.tail_repeats < 1 {
            return Err(Error::InvalidArgument("tail_repeats must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Source-side summary of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStatistics<T> {
    pub profile: QuantileProfile<T>,
    pub mean: T,
    pub std: T,
    pub calibrated_tails: Option<SampledTailEstimate<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HookStatistics<T> {
    pub hook_id: HookId,
    pub channels: Vec<ChannelStatistics<T>>,
}

/// Frozen output of [`setup_phase`]. Hooks appear shallow to deep.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceStatistics<T> {
    pub version: u32,
    pub k: usize,
    pub n_source: usize,
    pub tail_strategy: TailStrategy,
    pub layer_policy: LayerPolicy,
    pub tail_batch: usize,
    pub tail_repeats: usize,
    pub hooks: Vec<HookStatistics<T>>,
}

impl<T: Scalar> SourceStatistics<T> {
    pub fn hook(&self, id: &HookId) -> Option<&HookStatistics<T>> {
        self.hooks.iter().find(|h| &h.hook_id == id)
    }

    fn check_against(&self, net: &Network<T>) -> Result<()> {
        let net_hooks = net.hooks();
        if net_hooks.len() != self.hooks.len() {
            return Err(Error::DimensionMismatch(format!(
                "network has {} hooks, statistics describe {}",
                net_hooks.len(),
                self.hooks.len()
            )));
        }
        for (id, h) in net_hooks.iter().zip(&self.hooks) {
            if *id != h.hook_id {
                return Err(Error::UnknownHook(h.hook_id.to_string()));
            }
            let channels = net.hook_channels(id).unwrap_or(0);
            if channels != h.channels.len() {
                return Err(Error::DimensionMismatch(format!(
                    "hook `{id}` has {channels} channels, statistics describe {}",
                    h.channels.len()
                )));
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::MalformedStatistics("K must be ≥ 1".into()));
        }
        let mut seen = BTreeSet::new();
        for h in &self.hooks {
            if !seen.insert(&h.hook_id) {
                return Err(Error::MalformedStatistics(format!("duplicate hook `{}`", h.hook_id)));
            }
            for (c, ch) in h.channels.iter().enumerate() {
                if ch.profile.level_count() != self.k {
                    return Err(Error::MalformedStatistics(format!(
                        "hook `{}` channel {c} has {} intervals, expected {}",
                        h.hook_id,
                        ch.profile.level_count(),
                        self.k
                    )));
                }
                if !(ch.mean.is_finite() && ch.std.is_finite() && ch.std >= T::zero()) {
                    return Err(Error::MalformedStatistics(format!(
                        "hook `{}` channel {c} has invalid moments",
                        h.hook_id
                    )));
                }
                if self.tail_strategy == TailStrategy::AverageSampleTails && ch.calibrated_tails.is_none() {
                    return Err(Error::MalformedStatistics(format!(
                        "hook `{}` channel {c} lacks calibrated tails",
                        h.hook_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Population mean and standard deviation, accumulated in `f64`.
pub fn moments<T: Scalar>(values: &[T]) -> (T, T) {
    let n = values.len() as f64;
    let mean = values.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n;
    let var = values
        .iter()
        .map(|v| {
            let d = v.to_f64_lossy() - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (T::from_f64_lossy(mean), T::from_f64_lossy(var.sqrt()))
}

/// Runs the source data through the unmodified network and summarises every
/// hooked channel.
pub fn setup_phase<T: Scalar>(
    net: &Network<T>,
    source_batches: &[ArrayView2<'_, T>],
    cfg: &AdaptationConfig,
) -> Result<SourceStatistics<T>> {
    cfg.validate()?;
    let rows: usize = source_batches.iter().map(|b| b.nrows()).sum();
    let needed = (cfg.k + 1).max(cfg.tail_batch);
    if rows < needed {
        return Err(Error::InsufficientSamples { needed, got: rows });
    }
    let hooks = net.hooks();
    let mut pooled: Vec<Vec<Vec<T>>> = hooks
        .iter()
        .map(|h| vec![Vec::with_capacity(rows); net.hook_channels(h).unwrap_or(0)])
        .collect();
    for batch in source_batches.iter().filter(|b| b.nrows() > 0) {
        let pass = net.forward_plain(batch.view())?;
        for (slot, capture) in pooled.iter_mut().zip(&pass.captures) {
            for (c, col) in capture.pre_activations.axis_iter(Axis(1)).enumerate() {
                slot[c].extend(col.iter().copied());
            }
        }
    }

    let mut out = Vec::with_capacity(hooks.len());
    for (h, (id, channels)) in hooks.iter().zip(pooled).enumerate() {
        let stats = channels
            .par_iter()
            .enumerate()
            .map(|(c, samples)| {
                let profile = compute_quantile_profile(samples, cfg.k)?;
                let (mean, std) = moments(samples);
                let calibrated_tails = if cfg.tail_strategy == TailStrategy::AverageSampleTails {
                    let seed = derive_seed2(cfg.rng_seed, h as u64, c as u64);
                    Some(calibrate_average_sample_tails(samples, cfg.tail_batch, cfg.tail_repeats, seed)?)
                } else {
                    None
                };
                Ok(ChannelStatistics {
                    profile,
                    mean,
                    std,
                    calibrated_tails,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(HookStatistics {
            hook_id: id.clone(),
            channels: stats,
        });
    }
    Ok(SourceStatistics {
        version: STATISTICS_VERSION,
        k: cfg.k,
        n_source: rows,
        tail_strategy: cfg.tail_strategy,
        layer_policy: cfg.layer_policy,
        tail_batch: cfg.tail_batch,
        tail_repeats: cfg.tail_repeats,
        hooks: out,
    })
}

/// The per-channel map applied at adapted hooks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adapter {
    /// Quantile recalibration with the given tail strategy.
    Aqr(TailStrategy),
    /// Moment matching.
    Ttn,
    /// No adaptation.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HookDiagnostics<T> {
    pub hook_id: HookId,
    /// Batch profiles of the (possibly corrupted) pre-activations; empty for
    /// TTN and identity.
    pub target_profiles: Vec<QuantileProfile<T>>,
    /// Pre-activations after corruption and adaptation, before the
    /// activation function.
    pub adapted: Array2<T>,
    pub adapted_here: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptDiagnostics<T> {
    pub hooks: Vec<HookDiagnostics<T>>,
    pub warnings: Vec<String>,
}

impl<T> AdaptDiagnostics<T> {
    pub fn hook(&self, id: &HookId) -> Option<&HookDiagnostics<T>> {
        self.hooks.iter().find(|h| &h.hook_id == id)
    }
}

/// The tail rule for one channel given its source summary and the batch.
fn tail_rule_for<T: Scalar>(
    strategy: TailStrategy,
    source: &ChannelStatistics<T>,
    batch: &[T],
) -> Result<TailRule<T>> {
    Ok(match strategy {
        TailStrategy::Standard => TailRule::Standard,
        TailStrategy::NotCalibrated => TailRule::NotCalibrated,
        TailStrategy::Clipping => TailRule::Clipping,
        TailStrategy::AverageSampleTails => TailRule::AverageSampleTails(source.calibrated_tails.ok_or_else(|| {
            Error::TailContextMismatch("statistics carry no calibrated tails".into())
        })?),
        TailStrategy::GaussianEstimation => {
            let (mean, std) = moments(batch);
            TailRule::GaussianEstimation {
                source: GaussianFit {
                    mean: source.mean,
                    std: source.std,
                },
                target: GaussianFit { mean, std },
                plotting_n: batch.len(),
            }
        }
        TailStrategy::IntervalEstimation => TailRule::IntervalEstimation {
            source_std: source.std,
            target_std: moments(batch).1,
        },
    })
}

/// Forward pass that corrupts pre-activations with `shift` and then adapts
/// the hooks selected by the statistics' layer policy, shallow to deep.
///
/// Every batch is handled on its own; nothing carries over between calls.
pub fn adapt_batch_shifted<T: Scalar>(
    net: &Network<T>,
    stats: &SourceStatistics<T>,
    batch: ArrayView2<'_, T>,
    shift: &PreActivationShift<T>,
    adapter: Adapter,
) -> Result<(Array2<T>, AdaptDiagnostics<T>)> {
    let rows = batch.nrows();
    if rows < 2 {
        return Err(Error::CannotEstimateTargetQuantiles(rows));
    }
    stats.check_against(net)?;
    let selected: BTreeSet<HookId> = select_hooks(net, stats.layer_policy).into_iter().collect();
    let mut warnings = Vec::new();
    if rows <= stats.k && matches!(adapter, Adapter::Aqr(_)) {
        warnings.push(format!(
            "quantile undersampling: {rows} rows for {} intervals; tied knots collapse segments",
            stats.k
        ));
    }
    let mut hooks = Vec::new();
    let pass = net.forward_with(batch, |hook, mut pre| {
        shift.apply(hook, pre.view_mut())?;
        let source = stats.hook(hook).ok_or_else(|| Error::UnknownHook(hook.to_string()))?;
        let adapt_here = selected.contains(hook) && adapter != Adapter::Identity;
        let mut target_profiles = Vec::new();
        if adapt_here {
            for (c, mut col) in pre.axis_iter_mut(Axis(1)).enumerate() {
                let values = col.to_vec();
                let ch = &source.channels[c];
                match adapter {
                    Adapter::Aqr(strategy) => {
                        let target = compute_quantile_profile(&values, stats.k)?;
                        let rule = tail_rule_for(strategy, ch, &values)?;
                        let map = QuantileMap::new(&target, &ch.profile, rule)?;
                        col.mapv_inplace(|v| map.apply(v));
                        target_profiles.push(target);
                    }
                    Adapter::Ttn => {
                        let (mu_t, sigma_t) = moments(&values);
                        if sigma_t <= T::zero() {
                            return Err(Error::DegenerateTarget);
                        }
                        col.mapv_inplace(|v| ch.mean + ch.std * (v - mu_t) / sigma_t);
                    }
                    Adapter::Identity => {}
                }
            }
        }
        hooks.push(HookDiagnostics {
            hook_id: hook.clone(),
            target_profiles,
            adapted: pre.to_owned(),
            adapted_here: adapt_here,
        });
        Ok(())
    })?;
    Ok((pass.output, AdaptDiagnostics { hooks, warnings }))
}

/// Adapts one clean batch with the strategy recorded in `stats`.
pub fn adapt_batch<T: Scalar>(
    net: &Network<T>,
    stats: &SourceStatistics<T>,
    batch: ArrayView2<'_, T>,
) -> Result<(Array2<T>, AdaptDiagnostics<T>)> {
    adapt_batch_shifted(
        net,
        stats,
        batch,
        &PreActivationShift::none(),
        Adapter::Aqr(stats.tail_strategy),
    )
}

/// `μ_S + σ_S (x − μ_T) / σ_T`.
pub fn ttn_transform<T: Scalar>(x: T, mu_s: T, sigma_s: T, mu_t: T, sigma_t: T) -> Result<T> {
    if !(sigma_t > T::zero()) {
        return Err(Error::DegenerateTarget);
    }
    Ok(mu_s + sigma_s * (x - mu_t) / sigma_t)
}

/// `F_P⁻¹(F_Q(z))` from exact closed forms.
pub fn oracle_aqr(z: f64, source_quantile: impl Fn(f64) -> f64, target_cdf: impl Fn(f64) -> f64) -> f64 {
    source_quantile(target_cdf(z))
}

/// [`oracle_aqr`] that switches to the upper tail functions when
/// `F_Q(z) > 1/2`, so values far in the right tail keep full precision.
pub fn oracle_aqr_two_sided(
    z: f64,
    source_quantile: impl Fn(f64) -> f64,
    source_upper_quantile: impl Fn(f64) -> f64,
    target_cdf: impl Fn(f64) -> f64,
    target_sf: impl Fn(f64) -> f64,
) -> f64 {
    let u = target_cdf(z);
    if u <= 0.5 {
        source_quantile(u)
    } else {
        source_upper_quantile(target_sf(z))
    }
}

// ---------------------------------------------------------------------------
// Statistics files

fn raw_float(v: f64) -> Box<RawValue> {
    RawValue::from_string(format!("{v:.16e}")).expect("formatted float is valid JSON")
}

#[derive(Serialize)]
struct ChannelOut {
    knots: Vec<Box<RawValue>>,
    mean: Box<RawValue>,
    std: Box<RawValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    calibrated_low: Option<Box<RawValue>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    calibrated_high: Option<Box<RawValue>>,
}

#[derive(Serialize)]
struct HookOut<'a> {
    hook_id: &'a str,
    channels: Vec<ChannelOut>,
}

#[derive(Serialize)]
struct FileOut<'a> {
    version: u32,
    #[serde(rename = "K")]
    k: usize,
    n_source: usize,
    tail_strategy: &'static str,
    layer_policy: String,
    tail_batch: usize,
    tail_repeats: usize,
    hooks: Vec<HookOut<'a>>,
    checksum: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelIn {
    knots: Vec<f64>,
    mean: f64,
    std: f64,
    calibrated_low: Option<f64>,
    calibrated_high: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HookIn {
    hook_id: String,
    channels: Vec<ChannelIn>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileIn {
    version: u32,
    #[serde(rename = "K")]
    k: usize,
    n_source: usize,
    tail_strategy: String,
    layer_policy: String,
    tail_batch: usize,
    tail_repeats: usize,
    hooks: Vec<HookIn>,
    checksum: String,
}

/// SHA-256 over a canonical byte stream of every field (floats by bit
/// pattern), hex encoded.
fn checksum<T: Scalar>(stats: &SourceStatistics<T>) -> String {
    let mut h = Sha256::new();
    let put_u64 = |h: &mut Sha256, v: u64| h.update(v.to_le_bytes());
    put_u64(&mut h, stats.version as u64);
    put_u64(&mut h, stats.k as u64);
    put_u64(&mut h, stats.n_source as u64);
    put_u64(&mut h, stats.tail_batch as u64);
    put_u64(&mut h, stats.tail_repeats as u64);
    for s in [stats.tail_strategy.name().to_owned(), stats.layer_policy.to_string()] {
        put_u64(&mut h, s.len() as u64);
        h.update(s.as_bytes());
    }
    put_u64(&mut h, stats.hooks.len() as u64);
    for hook in &stats.hooks {
        put_u64(&mut h, hook.hook_id.0.len() as u64);
        h.update(hook.hook_id.0.as_bytes());
        put_u64(&mut h, hook.channels.len() as u64);
        for ch in &hook.channels {
            for v in ch.profile.knots() {
                put_u64(&mut h, v.to_f64_lossy().to_bits());
            }
            put_u64(&mut h, ch.mean.to_f64_lossy().to_bits());
            put_u64(&mut h, ch.std.to_f64_lossy().to_bits());
            match &ch.calibrated_tails {
                Some(t) => {
                    put_u64(&mut h, 1);
                    put_u64(&mut h, t.low.to_f64_lossy().to_bits());
                    put_u64(&mut h, t.high.to_f64_lossy().to_bits());
                }
                None => put_u64(&mut h, 0),
            }
        }
    }
    hex::encode(h.finalize())
}

/// JSON text of `stats` with 17-significant-digit floats.
pub fn statistics_to_json<T: Scalar>(stats: &SourceStatistics<T>) -> Result<String> {
    stats.validate()?;
    let f = |v: T| raw_float(v.to_f64_lossy());
    let doc = FileOut {
        version: stats.version,
        k: stats.k,
        n_source: stats.n_source,
        tail_strategy: stats.tail_strategy.name(),
        layer_policy: stats.layer_policy.to_string(),
        tail_batch: stats.tail_batch,
        tail_repeats: stats.tail_repeats,
        hooks: stats
            .hooks
            .iter()
            .map(|h| HookOut {
                hook_id: h.hook_id.as_str(),
                channels: h
                    .channels
                    .iter()
                    .map(|c| ChannelOut {
                        knots: c.profile.knots().iter().map(|&v| f(v)).collect(),
                        mean: f(c.mean),
                        std: f(c.std),
                        calibrated_low: c.calibrated_tails.map(|t| f(t.low)),
                        calibrated_high: c.calibrated_tails.map(|t| f(t.high)),
                    })
                    .collect(),
            })
            .collect(),
        checksum: checksum(stats),
    };
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Error::MalformedStatistics(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

/// Parses and verifies a statistics document.
pub fn statistics_from_json<T: Scalar>(text: &str) -> Result<SourceStatistics<T>> {
    let malformed = |m: String| Error::MalformedStatistics(m);
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
    let version = value
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| malformed("missing integer `version`".into()))?;
    if version != STATISTICS_VERSION as u64 {
        return Err(Error::UnsupportedVersion {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: STATISTICS_VERSION,
        });
    }
    let doc: FileIn = serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
    let tail_strategy: TailStrategy = doc.tail_strategy.parse().map_err(|e: Error| malformed(e.to_string()))?;
    let layer_policy: LayerPolicy = doc.layer_policy.parse().map_err(|e: Error| malformed(e.to_string()))?;
    let narrow = |v: f64| -> Result<T> {
        let t = T::from_f64_lossy(v);
        if t.to_f64_lossy() != v {
            return Err(malformed(format!("{v} is not representable in the requested precision")));
        }
        Ok(t)
    };
    let mut hooks = Vec::with_capacity(doc.hooks.len());
    for h in doc.hooks {
        let mut channels = Vec::with_capacity(h.channels.len());
        for c in h.channels {
            let knots = c.knots.iter().map(|&v| narrow(v)).collect::<Result<Vec<_>>>()?;
            let profile = QuantileProfile::from_knots(knots, doc.n_source.max(1)).map_err(|e| malformed(e.to_string()))?;
            let calibrated_tails = match (c.calibrated_low, c.calibrated_high) {
                (Some(low), Some(high)) => Some(SampledTailEstimate {
                    low: narrow(low)?,
                    high: narrow(high)?,
                    batch_size: doc.tail_batch,
                    repeats: doc.tail_repeats,
                }),
                (None, None) => None,
                _ => return Err(malformed("calibrated_low and calibrated_high must appear together".into())),
            };
            channels.push(ChannelStatistics {
                profile,
                mean: narrow(c.mean)?,
                std: narrow(c.std)?,
                calibrated_tails,
            });
        }
        hooks.push(HookStatistics {
            hook_id: HookId(h.hook_id),
            channels,
        });
    }
    let stats = SourceStatistics {
        version: doc.version,
        k: doc.k,
        n_source: doc.n_source,
        tail_strategy,
        layer_policy,
        tail_batch: doc.tail_batch,
        tail_repeats: doc.tail_repeats,
        hooks,
    };
    stats.validate()?;
    let computed = checksum(&stats);
    if computed != doc.checksum {
        return Err(Error::ChecksumMismatch {
            stored: doc.checksum,
            computed,
        });
    }
    Ok(stats)
}

pub fn save_statistics<T: Scalar>(stats: &SourceStatistics<T>, path: &Path) -> Result<()> {
    let text = statistics_to_json(stats)?;
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_statistics<T: Scalar>(path: &Path) -> Result<SourceStatistics<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    statistics_from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corruption::{sample_source, CorruptionSpec, Marginal, SourceSpec};
    use crate::net::{build_one_hidden_mlp, Activation, LayerSpec};
    use crate::special::{normal_cdf, probit};
    use ndarray::{array, Array1};
    use proptest::prelude::*;

    fn normal_rows(n: usize, d: usize, seed: u64) -> Array2<f64> {
        sample_source(&SourceSpec::iid(Marginal::StandardNormal, d, seed).unwrap(), n).unwrap()
    }

    fn mlp(m: usize) -> Network<f64> {
        build_one_hidden_mlp(3, m, Activation::leaky_relu(0.1).unwrap(), 11).unwrap()
    }

    fn unit_net() -> Network<f64> {
        let layer = LayerSpec::new(array![[1.0]], Array1::zeros(1), Activation::Identity, Some("h".into())).unwrap();
        Network::new(vec![layer]).unwrap()
    }

    fn cfg(k: usize) -> AdaptationConfig {
        AdaptationConfig {
            k,
            tail_repeats: 200,
            ..AdaptationConfig::default()
        }
    }

    #[test]
    fn setup_shapes() {
        let src = normal_rows(10_000, 3, 1);
        let stats = setup_phase(&mlp(4), &[src.view()], &cfg(100)).unwrap();
        assert_eq!(stats.hooks.len(), 1);
        assert_eq!(stats.hooks[0].channels.len(), 4);
        assert!(stats.hooks[0].channels.iter().all(|c| c.profile.knots().len() == 101));
        assert!(stats.hooks[0].channels.iter().all(|c| c.calibrated_tails.is_some()));
        assert_eq!(stats.n_source, 10_000);
    }

    #[test]
    fn setup_is_deterministic_and_pools_batches() {
        let src = normal_rows(4_000, 3, 2);
        let a = setup_phase(&mlp(4), &[src.view()], &cfg(50)).unwrap();
        let b = setup_phase(&mlp(4), &[src.view()], &cfg(50)).unwrap();
        assert_eq!(a, b);
        let (top, bottom) = src.view().split_at(Axis(0), 1_500);
        let split = setup_phase(&mlp(4), &[top, bottom], &cfg(50)).unwrap();
        assert_eq!(a.hooks[0].channels[0].profile, split.hooks[0].channels[0].profile);
    }

    #[test]
    fn setup_requires_enough_rows() {
        let src = normal_rows(99, 3, 2);
        let err = setup_phase(&mlp(4), &[src.view()], &cfg(10)).unwrap_err();
        assert_eq!(err, Error::InsufficientSamples { needed: 100, got: 99 });
        let err = setup_phase(&mlp(4), &[src.view()], &cfg(100)).unwrap_err();
        assert!(matches!(err, Error::InsufficientSamples { needed: 101, .. }));
    }

    #[test]
    fn setup_profile_matches_normal_quantiles() {
        let src = normal_rows(10_000, 1, 3);
        let stats = setup_phase(&unit_net(), &[src.view()], &cfg(100)).unwrap();
        let knots = stats.hooks[0].channels[0].profile.knots();
        for j in 1..100 {
            let exact = probit(j as f64 / 100.0).unwrap();
            assert!((knots[j] - exact).abs() < 0.05, "level {j}: {} vs {exact}", knots[j]);
        }
    }

    #[test]
    fn identity_regime() {
        let net = mlp(4);
        let stats = setup_phase(&net, &[normal_rows(20_000, 3, 4).view()], &cfg(100)).unwrap();
        let batch = normal_rows(4_096, 3, 5);
        let (adapted, diag) = adapt_batch(&net, &stats, batch.view()).unwrap();
        let plain = net.forward_plain(batch.view()).unwrap().output;
        let dev = (&adapted - &plain).mapv(f64::abs).mean().unwrap();
        assert!(dev < 0.05, "{dev}");
        assert!(diag.warnings.is_empty());
        assert_eq!(diag.hooks[0].target_profiles.len(), 4);
    }

    #[test]
    fn affine_corruption_is_undone() {
        let net = mlp(4);
        let stats = setup_phase(&net, &[normal_rows(20_000, 3, 6).view()], &cfg(100)).unwrap();
        let batch = normal_rows(8_192, 3, 7);
        let specs = (0..4)
            .map(|c| CorruptionSpec::affine(1.5 + 0.25 * c as f64, 0.5 - 0.3 * c as f64).unwrap())
            .collect();
        let shift = PreActivationShift::none().with_hook("hidden0".into(), specs).unwrap();
        let (_, diag) = adapt_batch_shifted(&net, &stats, batch.view(), &shift, Adapter::Aqr(TailStrategy::Standard)).unwrap();
        let clean = net.forward_plain(batch.view()).unwrap().captures.remove(0).pre_activations;
        let act = Activation::leaky_relu(0.1).unwrap();
        let mse = (diag.hooks[0].adapted.mapv(|v| act.apply(v)) - clean.mapv(|v| act.apply(v)))
            .mapv(|d| d * d)
            .mean()
            .unwrap();
        assert!(mse < 1e-3, "{mse}");
    }

    #[test]
    fn tiny_batches() {
        let net = mlp(4);
        let stats = setup_phase(&net, &[normal_rows(2_000, 3, 8).view()], &cfg(100)).unwrap();
        let (_, diag) = adapt_batch(&net, &stats, normal_rows(2, 3, 9).view()).unwrap();
        assert!(diag.warnings.iter().any(|w| w.contains("quantile undersampling")));
        let err = adapt_batch(&net, &stats, normal_rows(1, 3, 9).view()).unwrap_err();
        assert!(err.to_string().contains("cannot estimate target quantiles"));
    }

    #[test]
    fn every_strategy_runs_and_stats_must_match_net() {
        let net = mlp(4);
        let stats = setup_phase(&net, &[normal_rows(2_000, 3, 8).view()], &cfg(20)).unwrap();
        let batch = normal_rows(128, 3, 10);
        for s in TailStrategy::ALL {
            let (out, _) = adapt_batch_shifted(&net, &stats, batch.view(), &PreActivationShift::none(), Adapter::Aqr(s)).unwrap();
            assert!(out.iter().all(|v| v.is_finite()));
        }
        assert!(adapt_batch(&mlp(5), &stats, batch.view()).is_err());
    }

    #[test]
    fn missing_calibration_is_reported() {
        let net = mlp(2);
        let c = AdaptationConfig {
            tail_strategy: TailStrategy::Standard,
            ..cfg(10)
        };
        let stats = setup_phase(&net, &[normal_rows(500, 3, 8).view()], &c).unwrap();
        assert!(stats.hooks[0].channels[0].calibrated_tails.is_none());
        let err = adapt_batch_shifted(
            &net,
            &stats,
            normal_rows(64, 3, 1).view(),
            &PreActivationShift::none(),
            Adapter::Aqr(TailStrategy::AverageSampleTails),
        )
        .unwrap_err();
        assert!(matches!(err, Error::TailContextMismatch(_)));
    }

    #[test]
    fn ttn_examples() {
        assert_eq!(ttn_transform(3.0, 0.0, 1.0, 3.0, 2.0).unwrap(), 0.0);
        assert_eq!(ttn_transform(5.0, 0.0, 1.0, 3.0, 2.0).unwrap(), 1.0);
        assert_eq!(ttn_transform(-1.25, 0.7, 2.0, 0.7, 2.0).unwrap(), -1.25);
        assert_eq!(ttn_transform(1.0, 0.0, 1.0, 0.0, 0.0), Err(Error::DegenerateTarget));
    }

    #[test]
    fn ttn_moment_matching() {
        let x = normal_rows(5_000, 1, 12).column(0).mapv(|v| 3.0 + v * v * v);
        let (mu_t, sigma_t) = moments(x.as_slice().unwrap());
        let y: Vec<f64> = x.iter().map(|&v| ttn_transform(v, -1.0, 0.5, mu_t, sigma_t).unwrap()).collect();
        let (m, s) = moments(&y);
        assert!((m + 1.0).abs() < 1e-12 && (s - 0.5).abs() < 1e-12, "{m} {s}");
    }

    #[test]
    fn oracle_examples() {
        let q = |u: f64| probit(u).unwrap();
        for z in [-3.0, -0.4, 0.0, 1.1, 2.5] {
            assert!((oracle_aqr(z, q, normal_cdf) - z).abs() < 1e-9);
            // target N(3, 2²) onto N(0, 1)
            let t = oracle_aqr(z, q, |v| normal_cdf((v - 3.0) / 2.0));
            assert!((t - (z - 3.0) / 2.0).abs() < 1e-9);
        }
        let mut rng = crate::seed::rng_from_seed(5);
        for _ in 0..1_000 {
            let s: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
            let z = s * s * s;
            let t = oracle_aqr(z, q, |v| normal_cdf(v.cbrt()));
            assert!((t - s).abs() < 1e-8, "{s} -> {t}");
        }
    }

    #[test]
    fn ttn_agrees_with_oracle_on_gaussians() {
        let (mu_s, sd_s, mu_t, sd_t) = (0.5, 1.7, -2.0, 0.6);
        let q = |u: f64| mu_s + sd_s * probit(u).unwrap();
        let isf = |p: f64| mu_s - sd_s * probit(p).unwrap();
        for i in 0..=400 {
            let z = mu_t - 4.0 * sd_t + 8.0 * sd_t * i as f64 / 400.0;
            let oracle = oracle_aqr_two_sided(
                z,
                q,
                isf,
                |v| normal_cdf((v - mu_t) / sd_t),
                |v| normal_cdf(-(v - mu_t) / sd_t),
            );
            let ttn = ttn_transform(z, mu_s, sd_s, mu_t, sd_t).unwrap();
            assert!((oracle - ttn).abs() <= 1e-9, "{z}: {oracle} vs {ttn}");
        }
    }

    #[test]
    fn adapted_knots_align_with_source() {
        let net = unit_net();
        let c = AdaptationConfig {
            tail_strategy: TailStrategy::Standard,
            ..cfg(20)
        };
        let stats = setup_phase(&net, &[normal_rows(5_000, 1, 13).view()], &c).unwrap();
        let batch = normal_rows(1_000, 1, 14);
        let shift = PreActivationShift::none()
            .with_hook("h".into(), vec![CorruptionSpec::cubic(1.0, 1.0).unwrap()])
            .unwrap();
        let (out, _) = adapt_batch_shifted(&net, &stats, batch.view(), &shift, Adapter::Aqr(TailStrategy::Standard)).unwrap();
        let adapted = compute_quantile_profile(out.column(0).to_vec().as_slice(), 20).unwrap();
        let src = stats.hooks[0].channels[0].profile.knots();
        for j in 1..20 {
            let width = (src[j + 1] - src[j]).max(src[j] - src[j - 1]);
            assert!((adapted.knots()[j] - src[j]).abs() <= width, "level {j}");
        }
    }

    #[test]
    fn statistics_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.json");
        let stats = setup_phase(&mlp(3), &[normal_rows(1_000, 3, 15).view()], &cfg(16)).unwrap();
        save_statistics(&stats, &path).unwrap();
        let back: SourceStatistics<f64> = load_statistics(&path).unwrap();
        assert_eq!(back, stats);

        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        let err = load_statistics::<f64>(&path).unwrap_err();
        assert!(err.to_string().contains("malformed statistics file"), "{err}");

        fs::write(&path, text.replacen("\"version\": 1", "\"version\": 2", 1)).unwrap();
        let err = load_statistics::<f64>(&path).unwrap_err();
        assert!(err.to_string().contains("unsupported version"), "{err}");

        let knot = format!("{:.16e}", stats.hooks[0].channels[0].mean);
        fs::write(&path, text.replacen(&knot, "1.2500000000000000e0", 1)).unwrap();
        assert!(matches!(load_statistics::<f64>(&path), Err(Error::ChecksumMismatch { .. })));
    }

    #[test]
    fn f32_statistics_round_trip() {
        let net: Network<f32> = build_one_hidden_mlp(3, 3, Activation::Tanh, 2).unwrap();
        let src = normal_rows(600, 3, 16).mapv(|v| v as f32);
        let stats = setup_phase(&net, &[src.view()], &cfg(10)).unwrap();
        let back: SourceStatistics<f32> = statistics_from_json(&statistics_to_json(&stats).unwrap()).unwrap();
        assert_eq!(back, stats);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn json_round_trip_is_bit_exact(knots in proptest::collection::vec(-1e300f64..1e300, 2..12), mean in -1e10f64..1e10, std in 0f64..1e10, low in -1e3f64..0.0, span in 0f64..1e3) {
            let mut knots = knots;
            knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let k = knots.len() - 1;
            let stats = SourceStatistics {
                version: STATISTICS_VERSION,
                k,
                n_source: 77,
                tail_strategy: TailStrategy::AverageSampleTails,
                layer_policy: LayerPolicy::TopHalf,
                tail_batch: 10,
                tail_repeats: 3,
                hooks: vec![HookStatistics {
                    hook_id: "a".into(),
                    channels: vec![ChannelStatistics {
                        profile: QuantileProfile::from_knots(knots, 77).unwrap(),
                        mean,
                        std,
                        calibrated_tails: Some(SampledTailEstimate { low, high: low + span, batch_size: 10, repeats: 3 }),
                    }],
                }],
            };
            let back: SourceStatistics<f64> = statistics_from_json(&statistics_to_json(&stats).unwrap()).unwrap();
            prop_assert_eq!(back, stats);
        }

        #[test]
        fn batches_are_adapted_independently(seed_a in 0u64..1_000, seed_b in 0u64..1_000) {
            let net = unit_net();
            let stats = setup_phase(&net, &[normal_rows(400, 1, 99).view()], &cfg(10)).unwrap();
            let a = normal_rows(32, 1, seed_a);
            let b = normal_rows(32, 1, seed_b);
            let first = adapt_batch(&net, &stats, a.view()).unwrap().0;
            let _ = adapt_batch(&net, &stats, b.view()).unwrap();
            let again = adapt_batch(&net, &stats, a.view()).unwrap().0;
            prop_assert_eq!(first, again);
        }
    }
}
