//! Forward-only feed-forward networks with interception points at
//! pre-activations.
//!
//! Each dense output unit is one channel. A layer with a [`HookId`] exposes its
//! pre-activation matrix (batch × channels) before the activation function is
//! applied; interceptors may rewrite it in place.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HookId(pub String);

impl HookId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for HookId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for HookId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

/// Strictly increasing activation functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Activation {
    Identity,
    LeakyRelu { slope: f64 },
    Tanh,
}

impl Activation {
    pub fn leaky_relu(slope: f64) -> Result<Self> {
        if !(slope > 0.0 && slope.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "leaky-relu slope must be > 0, got {slope}"
            )));
        }
        Ok(Activation::LeakyRelu { slope })
    }

    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::LeakyRelu { slope } => {
                if x >= T::zero() {
                    x
                } else {
                    x * T::from_f64_lossy(slope)
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            Activation::LeakyRelu { slope } => Activation::leaky_relu(slope).map(|_| ()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec<T> {
    /// out_dim × in_dim
    pub weights: Array2<T>,
    pub bias: Array1<T>,
    pub activation: Activation,
    pub hook: Option<HookId>,
}

impl<T: Scalar> LayerSpec<T> {
    pub fn new(weights: Array2<T>, bias: Array1<T>, activation: Activation, hook: Option<HookId>) -> Result<Self> {
        activation.validate()?;
        if weights.nrows() != bias.len() {
            return Err(Error::DimensionMismatch(format!(
                "weights have {} rows but bias has {} entries",
                weights.nrows(),
                bias.len()
            )));
        }
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(Error::DimensionMismatch("empty layer".into()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
            hook,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// Pre-activations seen at one hook during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct HookCapture<T> {
    pub hook_id: HookId,
    /// batch × channels, recorded before any interceptor ran.
    pub pre_activations: Array2<T>,
}

impl<T: Scalar> HookCapture<T> {
    pub fn channels(&self) -> usize {
        self.pre_activations.ncols()
    }
}

/// The values of one channel across the batch.
pub fn channel_samples<T: Scalar>(capture: &HookCapture<T>, channel: usize) -> Result<Vec<T>> {
    if channel >= capture.channels() {
        return Err(Error::ChannelOutOfRange {
            channel,
            channels: capture.channels(),
        });
    }
    Ok(capture.pre_activations.column(channel).to_vec())
}

/// Concatenates one channel over several captures of the same hook.
pub fn pooled_channel_samples<T: Scalar>(captures: &[&HookCapture<T>], channel: usize) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(captures.iter().map(|c| c.pre_activations.nrows()).sum());
    for c in captures {
        out.extend(channel_samples(c, channel)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerPolicy {
    #[default]
    All,
    TopHalf,
}

impl fmt::Display for LayerPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LayerPolicy::All => "all",
            LayerPolicy::TopHalf => "top-half",
        })
    }
}

impl std::str::FromStr for LayerPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(LayerPolicy::All),
            "top-half" => Ok(LayerPolicy::TopHalf),
            other => Err(Error::InvalidArgument(format!("unknown layer policy `{other}`"))),
        }
    }
}

/// A per-channel scalar map used as an interceptor: `(channel, value) -> value`.
pub type ChannelMap<'a, T> = Box<dyn Fn(usize, T) -> T + Send + Sync + 'a>;

pub type Interceptors<'a, T> = BTreeMap<HookId, ChannelMap<'a, T>>;

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass<T> {
    pub output: Array2<T>,
    pub captures: Vec<HookCapture<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    layers: Vec<LayerSpec<T>>,
    input_dim: usize,
}

impl<T: Scalar> Network<T> {
    pub fn new(layers: Vec<LayerSpec<T>>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::InvalidArgument("network needs at least one layer".into()))?;
        let input_dim = first.in_dim();
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::DimensionMismatch(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        let mut seen = BTreeSet::new();
        for hook in layers.iter().filter_map(|l| l.hook.as_ref()) {
            if !seen.insert(hook.clone()) {
                return Err(Error::InvalidArgument(format!("duplicate hook `{hook}`")));
            }
        }
        Ok(Self { layers, input_dim })
    }

    pub fn layers(&self) -> &[LayerSpec<T>] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Hook ids ordered shallow to deep.
    pub fn hooks(&self) -> Vec<HookId> {
        self.layers.iter().filter_map(|l| l.hook.clone()).collect()
    }

    pub fn hook_channels(&self, hook: &HookId) -> Option<usize> {
        self.layers
            .iter()
            .find(|l| l.hook.as_ref() == Some(hook))
            .map(LayerSpec::out_dim)
    }

    /// Runs the network, handing each hooked pre-activation matrix to
    /// `intercept` before the activation is applied.
    pub fn forward_with<F>(&self, batch: ArrayView2<'_, T>, mut intercept: F) -> Result<ForwardPass<T>>
    where
        F: FnMut(&HookId, ArrayViewMut2<'_, T>) -> Result<()>,
    {
        if batch.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "batch has {} columns, network expects {}",
                batch.ncols(),
                self.input_dim
            )));
        }
        let mut captures = Vec::new();
        let mut current = batch.to_owned();
        for layer in &self.layers {
            let mut pre = current.dot(&layer.weights.t());
            pre += &layer.bias.view().insert_axis(Axis(0));
            if let Some(hook) = &layer.hook {
                captures.push(HookCapture {
                    hook_id: hook.clone(),
                    pre_activations: pre.clone(),
                });
                intercept(hook, pre.view_mut())?;
            }
            let act = layer.activation;
            pre.mapv_inplace(|v| act.apply(v));
            current = pre;
        }
        Ok(ForwardPass {
            output: current,
            captures,
        })
    }

    pub fn forward_plain(&self, batch: ArrayView2<'_, T>) -> Result<ForwardPass<T>> {
        self.forward_with(batch, |_, _| Ok(()))
    }
}

/// Forward pass with per-channel scalar interceptors keyed by hook.
pub fn forward<T: Scalar>(
    net: &Network<T>,
    batch: ArrayView2<'_, T>,
    interceptors: &Interceptors<'_, T>,
) -> Result<ForwardPass<T>> {
    let hooks: BTreeSet<HookId> = net.hooks().into_iter().collect();
    if let Some(unknown) = interceptors.keys().find(|h| !hooks.contains(*h)) {
        return Err(Error::UnknownHook(unknown.to_string()));
    }
    net.forward_with(batch, |hook, mut pre| {
        if let Some(map) = interceptors.get(hook) {
            for (c, mut col) in pre.axis_iter_mut(Axis(1)).enumerate() {
                col.mapv_inplace(|v| map(c, v));
            }
        }
        Ok(())
    })
}

/// Hooks adapted under `policy`, shallow to deep.
pub fn select_hooks<T: Scalar>(net: &Network<T>, policy: LayerPolicy) -> Vec<HookId> {
    let hooks = net.hooks();
    match policy {
        LayerPolicy::All => hooks,
        LayerPolicy::TopHalf => {
            let keep = hooks.len().div_ceil(2);
            hooks[hooks.len() - keep..].to_vec()
        }
    }
}

fn gaussian_matrix<T: Scalar>(rows: usize, cols: usize, scale: f64, rng: &mut crate::seed::Rng) -> Array2<T> {
    Array2::from_shape_fn((rows, cols), |_| {
        let z: f64 = StandardNormal.sample(rng);
        T::from_f64_lossy(z * scale)
    })
}

/// MLP with hooked hidden layers `hidden0`, `hidden1`, ... and a linear
/// scalar readout without bias.
///
/// Weights are `N(0, 1/in_dim)`, hidden biases `N(0, 0.1²)`; the stream is
/// fully determined by `rng_seed`.
pub fn build_mlp<T: Scalar>(d: usize, hidden: &[usize], activation: Activation, rng_seed: u64) -> Result<Network<T>> {
    if d == 0 || hidden.is_empty() || hidden.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "invalid dimensions: d = {d}, hidden = {hidden:?}"
        )));
    }
    activation.validate()?;
    let mut rng = rng_from_seed(rng_seed);
    let mut layers = Vec::with_capacity(hidden.len() + 1);
    let mut in_dim = d;
    for (i, &width) in hidden.iter().enumerate() {
        let w = gaussian_matrix(width, in_dim, 1.0 / (in_dim as f64).sqrt(), &mut rng);
        let b = gaussian_matrix(1, width, 0.1, &mut rng).row(0).to_owned();
        layers.push(LayerSpec::new(w, b, activation, Some(HookId(format!("hidden{i}"))))?);
        in_dim = width;
    }
    let readout = gaussian_matrix(1, in_dim, 1.0 / (in_dim as f64).sqrt(), &mut rng);
    layers.push(LayerSpec::new(readout, Array1::zeros(1), Activation::Identity, None)?);
    Network::new(layers)
}

/// One hidden layer of width `m` (hook `hidden0`) and a linear readout.
pub fn build_one_hidden_mlp<T: Scalar>(d: usize, m: usize, activation: Activation, rng_seed: u64) -> Result<Network<T>> {
    build_mlp(d, &[m], activation, rng_seed)
}
