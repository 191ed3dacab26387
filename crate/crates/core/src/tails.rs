//! Strategies for the two extreme segments of a quantile map.
//!
//! The interior of the map is fixed by the knots. Below the first inner knot
//! `p_1` and from the last inner knot `p_{K-1}` upward, the configured
//! [`TailRule`] decides the output. Every rule is post-processed by a
//! monotone envelope: low-side outputs never exceed the image of `p_1^T`
//! (which is `p_1^S`) and high-side outputs never fall below the image of
//! `p_{K-1}^T`. This keeps the whole map non-decreasing even for rules whose
//! raw formula is discontinuous at the inner knots.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantile::QuantileProfile;
use crate::seed::rng_from_seed;
use crate::special::probit;
use crate::Scalar;

/// The six tail strategies, without their parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TailStrategy {
    Standard,
    #[default]
    AverageSampleTails,
    NotCalibrated,
    Clipping,
    GaussianEstimation,
    IntervalEstimation,
}

impl TailStrategy {
    pub const ALL: [TailStrategy; 6] = [
        TailStrategy::Standard,
        TailStrategy::AverageSampleTails,
        TailStrategy::NotCalibrated,
        TailStrategy::Clipping,
        TailStrategy::GaussianEstimation,
        TailStrategy::IntervalEstimation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TailStrategy::Standard => "standard",
            TailStrategy::AverageSampleTails => "average-sample-tails",
            TailStrategy::NotCalibrated => "not-calibrated",
            TailStrategy::Clipping => "clipping",
            TailStrategy::GaussianEstimation => "gaussian-estimation",
            TailStrategy::IntervalEstimation => "interval-estimation",
        }
    }
}

impl fmt::Display for TailStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TailStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TailStrategy::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown tail strategy `{s}`")))
    }
}

/// Mean and standard deviation of a fitted normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFit<T> {
    pub mean: T,
    pub std: T,
}

/// Calibrated replacements for a source profile's minimum and maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledTailEstimate<T> {
    pub low: T,
    pub high: T,
    pub batch_size: usize,
    pub repeats: usize,
}

/// A tail strategy together with the parameters it needs.
#[derive(Debug, Clone, PartialEq)]
pub enum TailRule<T> {
    /// The piecewise-linear segment map on the extreme segments, extrapolated
    /// linearly outside the target range.
    Standard,
    /// As `Standard`, with the source minimum and maximum replaced by
    /// sampled estimates.
    AverageSampleTails(SampledTailEstimate<T>),
    /// Identity outside the inner knots.
    NotCalibrated,
    /// Constant at the inner-knot images.
    Clipping,
    /// Extreme segments spanned by fitted normal quantiles. `plotting_n` sets
    /// the outer level `1 / (n + 1)` used in place of the infinite 0 and 1
    /// quantiles.
    GaussianEstimation {
        source: GaussianFit<T>,
        target: GaussianFit<T>,
        plotting_n: usize,
    },
    /// Extreme segments with slope `source_std / target_std`, anchored at the
    /// target minimum (low side) and the last inner knot (high side).
    IntervalEstimation { source_std: T, target_std: T },
}

impl<T: Scalar> TailRule<T> {
    pub fn strategy(&self) -> TailStrategy {
        match self {
            TailRule::Standard => TailStrategy::Standard,
            TailRule::AverageSampleTails(_) => TailStrategy::AverageSampleTails,
            TailRule::NotCalibrated => TailStrategy::NotCalibrated,
            TailRule::Clipping => TailStrategy::Clipping,
            TailRule::GaussianEstimation { .. } => TailStrategy::GaussianEstimation,
            TailRule::IntervalEstimation { .. } => TailStrategy::IntervalEstimation,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::TailContextMismatch(msg));
        match self {
            TailRule::AverageSampleTails(est) => {
                if !(est.low.is_finite() && est.high.is_finite()) || est.low > est.high {
                    return bad(format!(
                        "calibrated tails must be finite with low <= high, got ({}, {})",
                        est.low, est.high
                    ));
                }
            }
            TailRule::GaussianEstimation {
                source,
                target,
                plotting_n,
            } => {
                for (side, fit) in [("source", source), ("target", target)] {
                    if !(fit.mean.is_finite() && fit.std.is_finite()) || fit.std < T::zero() {
                        return bad(format!("invalid {side} gaussian fit ({}, {})", fit.mean, fit.std));
                    }
                }
                if *plotting_n < 2 {
                    return bad(format!("plotting_n must be >= 2, got {plotting_n}"));
                }
            }
            TailRule::IntervalEstimation {
                source_std,
                target_std,
            } => {
                if !(source_std.is_finite() && target_std.is_finite())
                    || *source_std < T::zero()
                    || *target_std < T::zero()
                {
                    return bad(format!(
                        "standard deviations must be finite and >= 0, got ({source_std}, {target_std})"
                    ));
                }
            }
            TailRule::Standard | TailRule::NotCalibrated | TailRule::Clipping => {}
        }
        Ok(())
    }
}

/// Outer and inner knots of one side of the map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailAnchors<T> {
    /// `p_0`
    pub min: T,
    /// `p_1`
    pub first_inner: T,
    /// `p_{K-1}`
    pub last_inner: T,
    /// `p_K`
    pub max: T,
    /// K
    pub levels: usize,
}

impl<T: Scalar> TailAnchors<T> {
    pub fn from_profile(profile: &QuantileProfile<T>) -> Self {
        let k = profile.knots();
        let levels = profile.level_count();
        Self {
            min: k[0],
            first_inner: k[1],
            last_inner: k[levels - 1],
            max: k[levels],
            levels,
        }
    }

    fn is_consistent(&self) -> bool {
        self.min <= self.first_inner && self.last_inner <= self.max && self.levels >= 1
    }
}

/// Knot anchors of both profiles, as seen by the tail rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailContext<T> {
    pub source: TailAnchors<T>,
    pub target: TailAnchors<T>,
}

impl<T: Scalar> TailContext<T> {
    pub fn from_profiles(target: &QuantileProfile<T>, source: &QuantileProfile<T>) -> Result<Self> {
        if target.level_count() != source.level_count() {
            return Err(Error::ProfileMismatch {
                target: target.level_count(),
                source_levels: source.level_count(),
            });
        }
        Ok(Self {
            source: TailAnchors::from_profile(source),
            target: TailAnchors::from_profile(target),
        })
    }

    fn check(&self) -> Result<()> {
        if !self.source.is_consistent() || !self.target.is_consistent() {
            return Err(Error::TailContextMismatch("anchors out of order".into()));
        }
        if self.source.levels != self.target.levels {
            return Err(Error::TailContextMismatch(format!(
                "anchors built for {} and {} intervals",
                self.target.levels, self.source.levels
            )));
        }
        Ok(())
    }

    /// Which side of the map `x` belongs to, for values outside the interior.
    ///
    /// With a single interval the only segment belongs to the high side and
    /// the low side is everything below `p_0^T`.
    pub fn side(&self, x: T) -> TailSide {
        let boundary = if self.target.levels == 1 {
            self.target.min
        } else {
            self.target.first_inner
        };
        if x < boundary {
            TailSide::Low
        } else {
            TailSide::High
        }
    }

    /// Image of the low/high boundary knot: the ceiling for every low-side
    /// output.
    fn low_ceiling(&self) -> T {
        if self.source.levels == 1 {
            self.source.min
        } else {
            self.source.first_inner
        }
    }

    /// Image of `p_{K-1}^T`: the floor for every high-side output.
    fn high_floor(&self) -> T {
        if self.source.levels == 1 {
            self.source.min
        } else {
            self.source.last_inner
        }
    }
}

/// Which extreme segment a value falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailSide {
    Low,
    High,
}

/// The line through `(t0, s0)` and `(t1, s1)` evaluated at `x`; a vertical
/// target segment (`t0 == t1`) maps everything to `s0`.
#[inline]
pub(crate) fn segment_line<T: Scalar>(x: T, t0: T, t1: T, s0: T, s1: T) -> T {
    let dt = t1 - t0;
    if dt == T::zero() {
        return s0;
    }
    if t0 == s0 && t1 == s1 {
        return x;
    }
    s0 + ((x - t0) / dt) * (s1 - s0)
}

/// Validates `rule` against `ctx` and maps one tail value.
///
/// `x` is expected to lie below `p_1^T` or at/above `p_{K-1}^T`; the side is
/// chosen by [`TailContext::side`].
pub fn apply_tail_rule<T: Scalar>(x: T, rule: &TailRule<T>, ctx: &TailContext<T>) -> Result<T> {
    rule.validate()?;
    ctx.check()?;
    Ok(map_tail(x, ctx.side(x), rule, ctx))
}

/// Unchecked tail map; the caller has validated `rule` and `ctx`.
pub(crate) fn map_tail<T: Scalar>(x: T, side: TailSide, rule: &TailRule<T>, ctx: &TailContext<T>) -> T {
    let (s, t) = (&ctx.source, &ctx.target);
    let single = s.levels == 1;
    let raw = match (rule, side) {
        (TailRule::Standard, TailSide::Low) => segment_line(x, t.min, t.first_inner, s.min, s.first_inner),
        (TailRule::Standard, TailSide::High) => {
            if single {
                segment_line(x, t.min, t.max, s.min, s.max)
            } else {
                segment_line(x, t.last_inner, t.max, s.last_inner, s.max)
            }
        }
        (TailRule::AverageSampleTails(est), TailSide::Low) => {
            let low = est.low.min(s.first_inner);
            segment_line(x, t.min, t.first_inner, low, s.first_inner)
        }
        (TailRule::AverageSampleTails(est), TailSide::High) => {
            if single {
                let low = est.low.min(s.max);
                let high = est.high.max(low);
                segment_line(x, t.min, t.max, low, high)
            } else {
                let high = est.high.max(s.last_inner);
                segment_line(x, t.last_inner, t.max, s.last_inner, high)
            }
        }
        (TailRule::NotCalibrated, _) => x,
        (TailRule::Clipping, TailSide::Low) => ctx.low_ceiling(),
        (TailRule::Clipping, TailSide::High) => ctx.high_floor(),
        (
            TailRule::GaussianEstimation {
                source,
                target,
                plotting_n,
            },
            side,
        ) => gaussian_tail(x, side, *source, *target, *plotting_n, s.levels),
        (
            TailRule::IntervalEstimation {
                source_std,
                target_std,
            },
            side,
        ) => {
            let (t_anchor, s_anchor) = match side {
                TailSide::Low => (t.min, s.min),
                TailSide::High if single => (t.min, s.min),
                TailSide::High => (t.last_inner, s.last_inner),
            };
            if *target_std == T::zero() {
                s_anchor
            } else {
                (x - t_anchor) / *target_std * *source_std + s_anchor
            }
        }
    };
    match side {
        TailSide::Low => raw.min(ctx.low_ceiling()),
        TailSide::High => raw.max(ctx.high_floor()),
    }
}

fn gaussian_tail<T: Scalar>(
    x: T,
    side: TailSide,
    source: GaussianFit<T>,
    target: GaussianFit<T>,
    plotting_n: usize,
    levels: usize,
) -> T {
    let outer = 1.0 / (plotting_n as f64 + 1.0);
    let inner = 1.0 / levels as f64;
    // Levels of the segment end points: (p_0, p_1) or (p_{K-1}, p_K).
    let (a, b) = match side {
        TailSide::Low => (outer, inner.min(1.0 - outer)),
        TailSide::High => ((1.0 - inner).max(outer), 1.0 - outer),
    };
    let q = |fit: GaussianFit<T>, p: f64| {
        // a, b are strictly inside (0, 1): outer >= 1/(n+1) with n >= 2.
        fit.mean + fit.std * T::from_f64_lossy(probit(p).expect("level inside (0, 1)"))
    };
    segment_line(x, q(target, a), q(target, b), q(source, a), q(source, b))
}

/// Quantiles of a fitted normal at the plotting positions `1/(n+1)` and
/// `n/(n+1)`, standing in for its (infinite) minimum and maximum.
pub fn gaussian_tail_quantiles<T: Scalar>(mean: T, std: T, n: usize) -> Result<(T, T)> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("n must be >= 2, got {n}")));
    }
    if !(std >= T::zero()) {
        return Err(Error::InvalidArgument(format!("std must be >= 0, got {std}")));
    }
    let p_lo = 1.0 / (n as f64 + 1.0);
    let z = T::from_f64_lossy(probit(p_lo)?);
    Ok((mean + std * z, mean - std * z))
}

/// How batches are drawn during tail calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    WithReplacement,
    WithoutReplacement,
}

/// Averages the minima and maxima of `repeats` random batches of
/// `batch_size` samples drawn with replacement.
pub fn calibrate_average_sample_tails<T: Scalar>(
    samples: &[T],
    batch_size: usize,
    repeats: usize,
    rng_seed: u64,
) -> Result<SampledTailEstimate<T>> {
    calibrate_average_sample_tails_with(samples, batch_size, repeats, rng_seed, Sampling::WithReplacement)
}

pub fn calibrate_average_sample_tails_with<T: Scalar>(
    samples: &[T],
    batch_size: usize,
    repeats: usize,
    rng_seed: u64,
    sampling: Sampling,
) -> Result<SampledTailEstimate<T>> {
    if batch_size < 2 {
        return Err(Error::InvalidArgument(format!("batch_size must be >= 2, got {batch_size}")));
    }
    if repeats == 0 {
        return Err(Error::InvalidArgument("repeats must be >= 1".into()));
    }
    if batch_size > samples.len() {
        return Err(Error::BatchExceedsPopulation {
            batch: batch_size,
            population: samples.len(),
        });
    }
    if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteInput { index });
    }
    let mut rng = rng_from_seed(rng_seed);
    let n = samples.len();
    let (mut sum_lo, mut sum_hi) = (T::zero(), T::zero());
    for _ in 0..repeats {
        let (mut lo, mut hi) = (T::infinity(), T::neg_infinity());
        let mut visit = |v: T| {
            lo = lo.min(v);
            hi = hi.max(v);
        };
        match sampling {
            Sampling::WithReplacement => {
                for _ in 0..batch_size {
                    visit(samples[rng.random_range(0..n)]);
                }
            }
            Sampling::WithoutReplacement => {
                for i in index::sample(&mut rng, n, batch_size) {
                    visit(samples[i]);
                }
            }
        }
        sum_lo += lo;
        sum_hi += hi;
    }
    let r = T::from_usize_lossy(repeats);
    Ok(SampledTailEstimate {
        low: sum_lo / r,
        high: sum_hi / r,
        batch_size,
        repeats,
    })
}
