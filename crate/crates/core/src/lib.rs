//! Adaptive quantile recalibration of neural pre-activations.
//!
//! A source network's per-channel pre-activation quantiles are recorded once
//! ([`adaptation::setup_phase`]); at test time each incoming batch's quantiles
//! are mapped back onto them with a piecewise-linear transform
//! ([`transform::QuantileMap`]). The remaining modules provide the pieces
//! needed to study the method on synthetic data: a tiny forward-only MLP,
//! monotone corruption maps, and numerical checks of the finite-sample theory.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*F64`
//! aliases below name the common instantiations.

// Published coefficients are kept digit for digit; `!(a < b)` rejects NaN.
#![allow(clippy::excessive_precision, clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adaptation;
pub mod corruption;
pub mod error;
pub mod net;
pub mod quantile;
pub mod scalar;
pub mod seed;
pub mod special;
pub mod tails;
pub mod theory;
pub mod transform;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use adaptation::{
    adapt_batch, load_statistics, oracle_aqr, save_statistics, setup_phase, ttn_transform,
    AdaptationConfig, SourceStatistics,
};
pub use corruption::{CorruptionSpec, Marginal, SourceSpec};
pub use net::{Activation, HookId, LayerPolicy, Network};
pub use quantile::{compute_quantile_profile, interpolate_quantile, Ecdf, QuantileProfile};
pub use tails::{SampledTailEstimate, TailRule, TailStrategy};
pub use transform::{batch_transform, piecewise_transform, QuantileMap};

pub type QuantileProfileF64 = QuantileProfile<f64>;
pub type QuantileProfileF32 = QuantileProfile<f32>;
pub type EcdfF64 = Ecdf<f64>;
pub type TailRuleF64 = TailRule<f64>;
pub type NetworkF64 = Network<f64>;
pub type NetworkF32 = Network<f32>;
pub type CorruptionSpecF64 = CorruptionSpec<f64>;
pub type SourceStatisticsF64 = SourceStatistics<f64>;
pub type SourceStatisticsF32 = SourceStatistics<f32>;
