//! Experiment configuration: a TOML document with one section per concern.
//! Every key has a default, unknown keys are rejected, and validation runs
//! before any work starts.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use aqr::adaptation::AdaptationConfig;
use aqr::corruption::{CorruptionSpec, Marginal, SourceSpec};
use aqr::net::{build_mlp, Activation, LayerPolicy, Network};
use aqr::tails::TailStrategy;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Setup,
    Adapt,
    TheoryRates,
    TailAblation,
    TailDeviation,
    KdeDemo,
    Granularity,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Setup,
        Experiment::Adapt,
        Experiment::TheoryRates,
        Experiment::TailAblation,
        Experiment::TailDeviation,
        Experiment::KdeDemo,
        Experiment::Granularity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Setup => "setup",
            Experiment::Adapt => "adapt",
            Experiment::TheoryRates => "theory-rates",
            Experiment::TailAblation => "tail-ablation",
            Experiment::TailDeviation => "tail-deviation",
            Experiment::KdeDemo => "kde-demo",
            Experiment::Granularity => "granularity",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| CliError::Validation(format!("unknown experiment `{s}`")))
    }
}

/// Setup-phase settings plus the number of source rows to draw. The
/// calibration seed is derived from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationSection {
    #[serde(rename = "K")]
    pub k: usize,
    pub tail_strategy: TailStrategy,
    pub layer_policy: LayerPolicy,
    pub batch_size: usize,
    pub tail_batch: usize,
    pub tail_repeats: usize,
    pub n_source: usize,
}

impl Default for AdaptationSection {
    fn default() -> Self {
        let core = AdaptationConfig::default();
        Self {
            k: core.k,
            tail_strategy: core.tail_strategy,
            layer_policy: core.layer_policy,
            batch_size: core.batch_size,
            tail_batch: core.tail_batch,
            tail_repeats: core.tail_repeats,
            n_source: 10_000,
        }
    }
}

impl AdaptationSection {
    pub fn core(&self, rng_seed: u64) -> AdaptationConfig {
        AdaptationConfig {
            k: self.k,
            tail_strategy: self.tail_strategy,
            layer_policy: self.layer_policy,
            batch_size: self.batch_size,
            tail_batch: self.tail_batch,
            tail_repeats: self.tail_repeats,
            rng_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    /// Input dimension.
    pub d: usize,
    /// Hidden width.
    pub m: usize,
    /// Number of hidden layers.
    pub depth: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            d: 3,
            m: 8,
            depth: 1,
            activation: Activation::LeakyRelu { slope: 0.1 },
            seed: 7,
        }
    }
}

impl NetworkSection {
    pub fn build(&self) -> Result<Network<f64>, CliError> {
        Ok(build_mlp(self.d, &vec![self.m; self.depth], self.activation, self.seed)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSection {
    /// Marginal shared by every input dimension.
    pub marginal: Marginal,
}

impl Default for SourceSection {
    fn default() -> Self {
        Self {
            marginal: Marginal::StandardNormal,
        }
    }
}

impl SourceSection {
    pub fn spec(&self, d: usize, seed: u64) -> Result<SourceSpec, CliError> {
        Ok(SourceSpec::iid(self.marginal.clone(), d, seed)?)
    }
}

/// Corruption applied to the first hidden layer's pre-activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionSection {
    /// Used for every channel unless `channels` is given.
    pub default: CorruptionSpec<f64>,
    /// One map per channel of the first hidden layer.
    pub channels: Option<Vec<CorruptionSpec<f64>>>,
}

impl Default for CorruptionSection {
    fn default() -> Self {
        Self {
            default: CorruptionSpec::CubicMonotone { alpha: 1.0, scale: 1.0 },
            channels: None,
        }
    }
}

impl CorruptionSection {
    pub fn per_channel(&self, m: usize) -> Vec<CorruptionSpec<f64>> {
        self.channels.clone().unwrap_or_else(|| vec![self.default.clone(); m])
    }
}

/// One `(K, n_S, n_T)` point at which bound coverage is measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSetting {
    #[serde(rename = "K")]
    pub k: usize,
    pub n_source: usize,
    pub n_target: usize,
}

/// Independent parts of the theory experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TheoryPart {
    Rates,
    Bound,
    Lemmas,
    Dkw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySection {
    /// Which parts to run.
    pub parts: Vec<TheoryPart>,
    /// Half-width of the symmetric truncation of the standard normal.
    pub truncation: f64,
    pub ks: Vec<usize>,
    pub k_sweep_n: usize,
    pub ns: Vec<usize>,
    pub n_sweep_k: usize,
    pub rate_trials: usize,
    pub delta: f64,
    pub bound_settings: Vec<BoundSetting>,
    pub bound_trials: usize,
    pub gap_ks: Vec<usize>,
    pub gap_grid_factor: usize,
    pub dkw_n: usize,
    pub dkw_delta: f64,
    pub dkw_trials: usize,
}

impl Default for TheorySection {
    fn default() -> Self {
        Self {
            parts: vec![TheoryPart::Rates, TheoryPart::Bound, TheoryPart::Lemmas, TheoryPart::Dkw],
            truncation: 2.0,
            ks: vec![8, 16, 32, 64, 128],
            k_sweep_n: 200_000,
            ns: vec![500, 2_000, 8_000, 32_000],
            n_sweep_k: 128,
            rate_trials: 20,
            delta: 0.1,
            bound_settings: vec![
                BoundSetting {
                    k: 16,
                    n_source: 2_000,
                    n_target: 2_000,
                },
                BoundSetting {
                    k: 64,
                    n_source: 20_000,
                    n_target: 20_000,
                },
            ],
            bound_trials: 200,
            gap_ks: vec![8, 16, 32, 64, 128],
            gap_grid_factor: 100,
            dkw_n: 5_000,
            dkw_delta: 0.05,
            dkw_trials: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviationSection {
    pub reference_n: usize,
    pub small_n: usize,
    /// Small batches per repetition.
    pub batches: usize,
    #[serde(rename = "K")]
    pub k: usize,
}

impl Default for DeviationSection {
    fn default() -> Self {
        Self {
            reference_n: 10_000,
            small_n: 128,
            batches: 20,
            k: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdeSection {
    pub marginal: Marginal,
    pub corruption: CorruptionSpec<f64>,
    pub n: usize,
    pub grid: usize,
}

impl Default for KdeSection {
    fn default() -> Self {
        Self {
            marginal: Marginal::GaussianMixture {
                weights: vec![0.4, 0.6],
                means: vec![-2.0, 1.5],
                stds: vec![0.6, 0.8],
            },
            corruption: CorruptionSpec::CubicMonotone { alpha: 0.2, scale: 1.0 },
            n: 20_000,
            grid: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GranularitySection {
    pub ks: Vec<usize>,
    pub batch: usize,
}

impl Default for GranularitySection {
    fn default() -> Self {
        Self {
            ks: vec![10, 100],
            batch: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub batch_sizes: Vec<usize>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            batch_sizes: vec![128, 512],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<Experiment>,
    pub output_dir: PathBuf,
    pub master_seed: u64,
    /// Evaluation rows per run.
    pub eval_n: usize,
    /// Independent repetitions (seeds) of the experiment.
    pub trials: usize,
    pub adaptation: AdaptationSection,
    pub network: NetworkSection,
    pub source: SourceSection,
    pub corruption: CorruptionSection,
    pub theory: TheorySection,
    pub deviation: DeviationSection,
    pub kde: KdeSection,
    pub granularity: GranularitySection,
    pub ablation: AblationSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            output_dir: PathBuf::from("out"),
            master_seed: 0,
            eval_n: 10_240,
            trials: 10,
            adaptation: AdaptationSection::default(),
            network: NetworkSection::default(),
            source: SourceSection::default(),
            corruption: CorruptionSection::default(),
            theory: TheorySection::default(),
            deviation: DeviationSection::default(),
            kde: KdeSection::default(),
            granularity: GranularitySection::default(),
            ablation: AblationSection::default(),
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Validation(msg()))
    }
}

fn field<E: fmt::Display>(name: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Validation(format!("{name}: {e}"))
}

impl ExperimentConfig {
    /// Parses and validates a TOML document.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Validation(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let a = &self.adaptation;
        a.core(0).validate().map_err(|e| CliError::Validation(strip_invalid(&e.to_string())))?;
        check(a.n_source >= (a.k + 1).max(a.tail_batch), || {
            format!(
                "adaptation.n_source must be ≥ max(K + 1, tail_batch) = {}, got {}",
                (a.k + 1).max(a.tail_batch),
                a.n_source
            )
        })?;
        check(self.trials >= 1, || "trials must be ≥ 1".into())?;
        check(self.eval_n >= 2, || format!("eval_n must be ≥ 2, got {}", self.eval_n))?;

        let n = &self.network;
        check(n.d >= 1 && n.m >= 1 && n.depth >= 1, || {
            format!("network: d, m and depth must be ≥ 1, got ({}, {}, {})", n.d, n.m, n.depth)
        })?;
        n.activation.validate().map_err(field("network.activation"))?;
        self.source.marginal.validate().map_err(field("source.marginal"))?;

        let c = &self.corruption;
        c.default.validate().map_err(field("corruption.default"))?;
        if let Some(ch) = &c.channels {
            check(ch.len() == n.m, || {
                format!("corruption.channels has {} entries, network.m is {}", ch.len(), n.m)
            })?;
            for (i, s) in ch.iter().enumerate() {
                s.validate().map_err(field(&format!("corruption.channels[{i}]")))?;
            }
        }

        let t = &self.theory;
        check(!t.parts.is_empty(), || "theory.parts must be non-empty".into())?;
        check(t.truncation > 0.0 && t.truncation.is_finite(), || {
            format!("theory.truncation must be > 0, got {}", t.truncation)
        })?;
        for (name, xs) in [("theory.ks", &t.ks), ("theory.ns", &t.ns), ("theory.gap_ks", &t.gap_ks)] {
            check(xs.len() >= 3 && xs.iter().all(|&x| x >= 1), || {
                format!("{name} needs at least 3 entries, all ≥ 1")
            })?;
        }
        check(t.n_sweep_k >= 1 && t.k_sweep_n >= 2, || "theory: n_sweep_k ≥ 1 and k_sweep_n ≥ 2".into())?;
        check(t.ns.iter().all(|&v| v >= 2), || "theory.ns entries must be ≥ 2".into())?;
        check(t.rate_trials >= 1 && t.bound_trials >= 1 && t.dkw_trials >= 1, || {
            "theory: trial counts must be ≥ 1".into()
        })?;
        for (name, d) in [("theory.delta", t.delta), ("theory.dkw_delta", t.dkw_delta)] {
            check(d > 0.0 && d < 1.0, || format!("{name} must be in (0, 1), got {d}"))?;
        }
        for (i, b) in t.bound_settings.iter().enumerate() {
            check(b.k >= 1 && b.n_source >= 2 && b.n_target >= 1, || {
                format!("theory.bound_settings[{i}]: need K ≥ 1, n_source ≥ 2, n_target ≥ 1")
            })?;
        }
        check(t.gap_grid_factor >= 10, || {
            format!("theory.gap_grid_factor must be ≥ 10, got {}", t.gap_grid_factor)
        })?;
        check(t.dkw_n >= 1, || "theory.dkw_n must be ≥ 1".into())?;

        let d = &self.deviation;
        check(d.k >= 1, || "deviation.K must be ≥ 1".into())?;
        check(d.small_n >= 2 && d.small_n <= d.reference_n, || {
            format!(
                "deviation: need 2 ≤ small_n ≤ reference_n, got small_n = {}, reference_n = {}",
                d.small_n, d.reference_n
            )
        })?;
        check(d.batches >= 2, || format!("deviation.batches must be ≥ 2, got {}", d.batches))?;

        let k = &self.kde;
        k.marginal.validate().map_err(field("kde.marginal"))?;
        k.corruption.validate().map_err(field("kde.corruption"))?;
        check(k.n >= (a.k + 1).max(a.tail_batch), || {
            format!("kde.n must be ≥ max(K + 1, tail_batch), got {}", k.n)
        })?;
        check(k.grid >= 2, || "kde.grid must be ≥ 2".into())?;

        let g = &self.granularity;
        check(!g.ks.is_empty() && g.ks.iter().all(|&v| v >= 1), || {
            "granularity.ks must be non-empty with entries ≥ 1".into()
        })?;
        check(g.batch >= 2 && g.batch <= self.eval_n, || {
            format!("granularity.batch must be in [2, eval_n], got {}", g.batch)
        })?;
        let need = g.ks.iter().map(|k| k + 1).max().unwrap_or(0).max(a.tail_batch);
        check(a.n_source >= need, || {
            format!("adaptation.n_source must be ≥ {need} for granularity.ks")
        })?;

        check(!self.ablation.batch_sizes.is_empty(), || "ablation.batch_sizes must be non-empty".into())?;
        for &b in &self.ablation.batch_sizes {
            check(b >= 2 && b <= self.eval_n, || {
                format!("ablation.batch_sizes entry {b} must be in [2, eval_n]")
            })?;
        }
        Ok(())
    }

    /// Checks that the config can drive `experiment`.
    pub fn check_experiment(&self, experiment: Experiment) -> Result<(), CliError> {
        if let Some(named) = self.experiment {
            check(named == experiment, || {
                format!("config names experiment `{named}` but `{experiment}` was requested")
            })?;
        }
        if experiment == Experiment::Adapt {
            let b = self.adaptation.batch_size;
            check(b <= self.eval_n, || {
                format!("adaptation.batch_size ({b}) exceeds eval_n ({})", self.eval_n)
            })?;
        }
        Ok(())
    }
}

fn strip_invalid(msg: &str) -> String {
    msg.strip_prefix("invalid argument: ").unwrap_or(msg).to_owned()
}
