//! Empirical quantile profiles and empirical CDFs.

use crate::error::{Error, Result};
use crate::scalar::cmp_finite;
use crate::Scalar;

/// Sorted knot values `p_0 ..= p_K` at the uniform levels `j / K`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileProfile<T> {
    knots: Vec<T>,
    sample_count: usize,
}

impl<T: Scalar> QuantileProfile<T> {
    /// Wraps precomputed knots. They must be finite, non-decreasing and at
    /// least two long.
    pub fn from_knots(knots: Vec<T>, sample_count: usize) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidProfile(format!(
                "need at least 2 knots, got {}",
                knots.len()
            )));
        }
        if sample_count == 0 {
            return Err(Error::InvalidProfile("sample_count must be >= 1".into()));
        }
        if let Some(index) = knots.iter().position(|k| !k.is_finite()) {
            return Err(Error::NonFiniteInput { index });
        }
        if let Some(j) = knots.windows(2).position(|w| w[0] > w[1]) {
            return Err(Error::InvalidProfile(format!(
                "knots decrease between index {j} and {}",
                j + 1
            )));
        }
        Ok(Self {
            knots,
            sample_count,
        })
    }

    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    /// Number of intervals K.
    pub fn level_count(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn min(&self) -> T {
        self.knots[0]
    }

    pub fn max(&self) -> T {
        self.knots[self.knots.len() - 1]
    }

    /// Level `j / K` of knot `j`.
    pub fn level(&self, j: usize) -> f64 {
        j as f64 / self.level_count() as f64
    }

    /// Piecewise-linear quantile function through the knots.
    pub fn interpolate(&self, u: T) -> Result<T> {
        interpolate_quantile(self, u)
    }
}

/// Builds a `k`-interval profile from raw samples.
///
/// Knot `j` is the linear interpolation between order statistics at the
/// zero-based position `(n - 1) * j / k`; knot 0 is the sample minimum and
/// knot `k` the maximum. Positions are computed in integer arithmetic so that
/// knots landing on an order statistic reproduce it exactly.
pub fn compute_quantile_profile<T: Scalar>(samples: &[T], k: usize) -> Result<QuantileProfile<T>> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be >= 1".into()));
    }
    if samples.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteInput { index });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(cmp_finite);
    Ok(profile_from_sorted(&sorted, k))
}

/// Same as [`compute_quantile_profile`] for data already sorted ascending and
/// known to be finite.
pub(crate) fn profile_from_sorted<T: Scalar>(sorted: &[T], k: usize) -> QuantileProfile<T> {
    let n = sorted.len();
    let span = (n - 1) as u128;
    let k128 = k as u128;
    let knots = (0..=k)
        .map(|j| {
            let numer = span * j as u128;
            let lo = (numer / k128) as usize;
            let rem = numer % k128;
            if rem == 0 {
                sorted[lo]
            } else {
                let frac = T::from_f64_lossy(rem as f64 / k as f64);
                let (a, b) = (sorted[lo], sorted[lo + 1]);
                a + frac * (b - a)
            }
        })
        .collect();
    QuantileProfile {
        knots,
        sample_count: n,
    }
}

/// Linear interpolation of the profile at level `u`.
pub fn interpolate_quantile<T: Scalar>(profile: &QuantileProfile<T>, u: T) -> Result<T> {
    if !(u >= T::zero() && u <= T::one()) {
        return Err(Error::LevelOutOfRange(u.to_f64_lossy()));
    }
    let k = profile.level_count();
    let kf = T::from_usize_lossy(k);
    let t = u * kf;
    let nearest = t.round();
    let snap = T::from_f64_lossy(4.0) * T::epsilon() * kf;
    if (t - nearest).abs() <= snap {
        let j = nearest.to_usize().unwrap_or(0).min(k);
        return Ok(profile.knots[j]);
    }
    let j = t.floor().to_usize().unwrap_or(0).min(k - 1);
    let frac = t - T::from_usize_lossy(j);
    let (a, b) = (profile.knots[j], profile.knots[j + 1]);
    Ok(a + frac * (b - a))
}

/// Empirical CDF over a sorted copy of the samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf<T> {
    sorted: Vec<T>,
}

impl<T: Scalar> Ecdf<T> {
    pub fn new(samples: &[T]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFiniteInput { index });
        }
        let mut sorted = samples.to_vec();
        sorted.sort_unstable_by(cmp_finite);
        Ok(Self { sorted })
    }

    pub fn sorted_samples(&self) -> &[T] {
        &self.sorted
    }

    pub fn size(&self) -> usize {
        self.sorted.len()
    }

    /// Fraction of samples `<= x`.
    pub fn eval(&self, x: T) -> T {
        let count = self.sorted.partition_point(|s| *s <= x);
        T::from_usize_lossy(count) / T::from_usize_lossy(self.sorted.len())
    }

    /// `sup_x |F̂(x) − F(x)|` against a continuous reference CDF.
    ///
    /// The supremum of a step-vs-continuous difference is attained at the
    /// jumps, so only the left and right limits at each sample are checked.
    pub fn sup_deviation(&self, cdf: impl Fn(T) -> T) -> T {
        let n = T::from_usize_lossy(self.sorted.len());
        let mut worst = T::zero();
        for (i, &x) in self.sorted.iter().enumerate() {
            let f = cdf(x);
            let below = T::from_usize_lossy(i) / n;
            let above = T::from_usize_lossy(i + 1) / n;
            worst = worst.max((f - below).abs()).max((above - f).abs());
        }
        worst
    }

    /// Profile of the stored samples, sharing the sorted buffer.
    pub fn quantile_profile(&self, k: usize) -> Result<QuantileProfile<T>> {
        if k == 0 {
            return Err(Error::InvalidArgument("K must be >= 1".into()));
        }
        if self.sorted.len() < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: self.sorted.len(),
            });
        }
        Ok(profile_from_sorted(&self.sorted, k))
    }
}

pub fn ecdf_eval<T: Scalar>(e: &Ecdf<T>, x: T) -> T {
    e.eval(x)
}
