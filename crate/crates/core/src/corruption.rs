//! Strictly increasing corruption maps and synthetic source distributions.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayViewMut2, Axis};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::HookId;
use crate::seed::{derive_seed, rng_from_seed, Rng};
use crate::special::{normal_cdf, normal_pdf, normal_sf, probit};
use crate::Scalar;

/// A strictly increasing map `g: ℝ → ℝ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CorruptionSpec<T> {
    /// `scale · t + shift`
    Affine { scale: T, shift: T },
    /// `scale · t + alpha · t³`
    CubicMonotone { alpha: T, scale: T },
    /// `t + amplitude · tanh(gain · t)`
    TanhWarp { gain: T, amplitude: T },
    /// Applies `parts` in order, first element first.
    Compose { parts: Vec<CorruptionSpec<T>> },
}

impl<T: Scalar> CorruptionSpec<T> {
    pub fn identity() -> Self {
        CorruptionSpec::Affine {
            scale: T::one(),
            shift: T::zero(),
        }
    }

    pub fn affine(scale: T, shift: T) -> Result<Self> {
        let spec = CorruptionSpec::Affine { scale, shift };
        spec.validate()?;
        Ok(spec)
    }

    pub fn cubic(alpha: T, scale: T) -> Result<Self> {
        let spec = CorruptionSpec::CubicMonotone { alpha, scale };
        spec.validate()?;
        Ok(spec)
    }

    pub fn tanh_warp(gain: T, amplitude: T) -> Result<Self> {
        let spec = CorruptionSpec::TanhWarp { gain, amplitude };
        spec.validate()?;
        Ok(spec)
    }

    pub fn compose(parts: Vec<CorruptionSpec<T>>) -> Result<Self> {
        let spec = CorruptionSpec::Compose { parts };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks the strict-monotonicity constraints of every variant.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidCorruption(msg));
        let finite = |xs: &[T]| xs.iter().all(|x| x.is_finite());
        match self {
            CorruptionSpec::Affine { scale, shift } => {
                if !finite(&[*scale, *shift]) || *scale <= T::zero() {
                    return bad(format!("affine needs scale > 0, got {scale}"));
                }
            }
            CorruptionSpec::CubicMonotone { alpha, scale } => {
                if !finite(&[*alpha, *scale]) || *scale <= T::zero() || *alpha < T::zero() {
                    return bad(format!("cubic needs scale > 0 and alpha >= 0, got ({alpha}, {scale})"));
                }
            }
            CorruptionSpec::TanhWarp { gain, amplitude } => {
                // g'(t) = 1 + amplitude·gain·sech²(gain·t) >= 1 + amplitude·gain
                if !finite(&[*gain, *amplitude]) || *gain <= T::zero() || T::one() + *amplitude * *gain <= T::zero() {
                    return bad(format!(
                        "tanh warp needs gain > 0 and 1 + amplitude·gain > 0, got ({gain}, {amplitude})"
                    ));
                }
            }
            CorruptionSpec::Compose { parts } => {
                for p in parts {
                    p.validate()?;
                }
            }
        }
        Ok(())
    }

    pub fn is_affine(&self) -> bool {
        match self {
            CorruptionSpec::Affine { .. } => true,
            CorruptionSpec::CubicMonotone { alpha, .. } => *alpha == T::zero(),
            CorruptionSpec::TanhWarp { amplitude, .. } => *amplitude == T::zero(),
            CorruptionSpec::Compose { parts } => parts.iter().all(Self::is_affine),
        }
    }

    #[inline]
    pub fn apply(&self, x: T) -> T {
        match self {
            CorruptionSpec::Affine { scale, shift } => *scale * x + *shift,
            CorruptionSpec::CubicMonotone { alpha, scale } => *scale * x + *alpha * x * x * x,
            CorruptionSpec::TanhWarp { gain, amplitude } => x + *amplitude * (*gain * x).tanh(),
            CorruptionSpec::Compose { parts } => parts.iter().fold(x, |acc, p| p.apply(acc)),
        }
    }

    /// Solves `g(x) = y` to within `tol` in the output.
    ///
    /// Affine maps are inverted in closed form; everything else by bisection
    /// after growing a bracket geometrically around `y`.
    pub fn invert(&self, y: T, tol: T) -> Result<T> {
        if !y.is_finite() {
            return Err(Error::InvalidArgument(format!("cannot invert non-finite value {y}")));
        }
        if !(tol > T::zero()) {
            return Err(Error::InvalidArgument(format!("tolerance must be > 0, got {tol}")));
        }
        if let CorruptionSpec::Affine { scale, shift } = self {
            return Ok((y - *shift) / *scale);
        }
        let two = T::one() + T::one();
        let mut width = T::one();
        let mut lo = y - width;
        while self.apply(lo) > y {
            width *= two;
            lo = y - width;
        }
        width = T::one();
        let mut hi = y + width;
        while self.apply(hi) < y {
            width *= two;
            hi = y + width;
        }
        loop {
            let mid = lo + (hi - lo) / two;
            let gm = self.apply(mid);
            if (gm - y).abs() <= tol || mid <= lo || mid >= hi {
                return Ok(mid);
            }
            if gm < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
}

pub fn corrupt<T: Scalar>(spec: &CorruptionSpec<T>, x: T) -> T {
    spec.apply(x)
}

pub fn invert<T: Scalar>(spec: &CorruptionSpec<T>, y: T, tol: T) -> Result<T> {
    spec.invert(y, tol)
}

/// Per-hook, per-channel corruption applied at pre-activations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PreActivationShift<T> {
    per_hook: BTreeMap<HookId, Vec<CorruptionSpec<T>>>,
}

impl<T: Scalar> PreActivationShift<T> {
    pub fn none() -> Self {
        Self {
            per_hook: BTreeMap::new(),
        }
    }

    pub fn with_hook(mut self, hook: HookId, channels: Vec<CorruptionSpec<T>>) -> Result<Self> {
        for c in &channels {
            c.validate()?;
        }
        self.per_hook.insert(hook, channels);
        Ok(self)
    }

    pub fn get(&self, hook: &HookId) -> Option<&[CorruptionSpec<T>]> {
        self.per_hook.get(hook).map(Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.per_hook.is_empty()
    }

    /// Corrupts a pre-activation matrix in place. Hooks without an entry are
    /// left untouched.
    pub fn apply(&self, hook: &HookId, mut pre: ArrayViewMut2<'_, T>) -> Result<()> {
        let Some(specs) = self.per_hook.get(hook) else {
            return Ok(());
        };
        if specs.len() != pre.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "hook `{hook}` has {} channels but {} corruption maps",
                pre.ncols(),
                specs.len()
            )));
        }
        for (spec, mut col) in specs.iter().zip(pre.axis_iter_mut(Axis(1))) {
            col.mapv_inplace(|v| spec.apply(v));
        }
        Ok(())
    }
}

/// A univariate source distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Marginal {
    StandardNormal,
    TruncatedNormal { lo: f64, hi: f64 },
    UniformInterval { lo: f64, hi: f64 },
    GaussianMixture { weights: Vec<f64>, means: Vec<f64>, stds: Vec<f64> },
}

impl Marginal {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSource(m));
        match self {
            Marginal::StandardNormal => {}
            Marginal::TruncatedNormal { lo, hi } | Marginal::UniformInterval { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return bad(format!("need finite lo < hi, got [{lo}, {hi}]"));
                }
            }
            Marginal::GaussianMixture { weights, means, stds } => {
                if weights.is_empty() || weights.len() != means.len() || weights.len() != stds.len() {
                    return bad("mixture weights, means and stds must have equal non-zero length".into());
                }
                if weights.iter().any(|w| !(*w > 0.0)) || stds.iter().any(|s| !(*s > 0.0)) {
                    return bad("mixture weights and stds must be positive".into());
                }
                if means.iter().any(|m| !m.is_finite()) {
                    return bad("mixture means must be finite".into());
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return bad(format!("mixture weights sum to {total}, not 1"));
                }
            }
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        match self {
            Marginal::StandardNormal => StandardNormal.sample(rng),
            Marginal::UniformInterval { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Marginal::TruncatedNormal { lo, hi } => {
                // Inverse CDF on the side of zero that keeps precision.
                let (a, b, flip) = if *lo >= 0.0 { (-hi, -lo, true) } else { (*lo, *hi, false) };
                let (fa, fb) = (normal_cdf(a), normal_cdf(b));
                let mut u = fa + (fb - fa) * rng.random::<f64>();
                u = u.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
                let x = probit(u).expect("clamped into (0, 1)").clamp(a, b);
                if flip {
                    -x
                } else {
                    x
                }
            }
            Marginal::GaussianMixture { weights, means, stds } => {
                let mut u = rng.random::<f64>();
                let mut k = weights.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    if u < *w {
                        k = i;
                        break;
                    }
                    u -= w;
                }
                let z: f64 = StandardNormal.sample(rng);
                means[k] + stds[k] * z
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Marginal::StandardNormal => normal_cdf(x),
            Marginal::UniformInterval { lo, hi } => ((x - lo) / (hi - lo)).clamp(0.0, 1.0),
            Marginal::TruncatedNormal { lo, hi } => {
                if x <= *lo {
                    0.0
                } else if x >= *hi {
                    1.0
                } else {
                    (normal_cdf(x) - normal_cdf(*lo)) / (normal_cdf(*hi) - normal_cdf(*lo))
                }
            }
            Marginal::GaussianMixture { weights, means, stds } => weights
                .iter()
                .zip(means.iter().zip(stds))
                .map(|(w, (m, s))| w * normal_cdf((x - m) / s))
                .sum(),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            Marginal::StandardNormal => normal_pdf(x),
            Marginal::UniformInterval { lo, hi } => {
                if x >= *lo && x <= *hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            Marginal::TruncatedNormal { lo, hi } => {
                if x >= *lo && x <= *hi {
                    normal_pdf(x) / (normal_cdf(*hi) - normal_cdf(*lo))
                } else {
                    0.0
                }
            }
            Marginal::GaussianMixture { weights, means, stds } => weights
                .iter()
                .zip(means.iter().zip(stds))
                .map(|(w, (m, s))| w * normal_pdf((x - m) / s) / s)
                .sum(),
        }
    }

    /// Exact quantile function on `[0, 1]` (infinite endpoints for
    /// unbounded supports).
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            Marginal::StandardNormal => {
                if u <= 0.0 {
                    f64::NEG_INFINITY
                } else if u >= 1.0 {
                    f64::INFINITY
                } else {
                    probit(u).expect("u in (0, 1)")
                }
            }
            Marginal::UniformInterval { lo, hi } => lo + (hi - lo) * u.clamp(0.0, 1.0),
            Marginal::TruncatedNormal { lo, hi } => {
                if u <= 0.0 {
                    return *lo;
                }
                if u >= 1.0 {
                    return *hi;
                }
                if *lo >= 0.0 || (*hi > 0.0 && u > 0.5 && -lo > *hi) {
                    // mirror so the probit argument stays away from 1
                    let (fa, fb) = (normal_sf(*hi), normal_sf(*lo));
                    let p = fa + (fb - fa) * (1.0 - u);
                    return (-probit(p).expect("inside (0, 1)")).clamp(*lo, *hi);
                }
                let (fa, fb) = (normal_cdf(*lo), normal_cdf(*hi));
                probit(fa + (fb - fa) * u).expect("inside (0, 1)").clamp(*lo, *hi)
            }
            Marginal::GaussianMixture { means, stds, .. } => {
                if u <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                if u >= 1.0 {
                    return f64::INFINITY;
                }
                let spread = stds.iter().cloned().fold(0.0, f64::max);
                let mut lo = means.iter().cloned().fold(f64::INFINITY, f64::min) - 40.0 * spread;
                let mut hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 40.0 * spread;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if self.cdf(mid) < u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-15 * mid.abs().max(1.0) {
                        break;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }
}

/// Independent marginals for each input dimension plus a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub marginals: Vec<Marginal>,
    pub rng_seed: u64,
}

impl SourceSpec {
    pub fn iid(marginal: Marginal, d: usize, rng_seed: u64) -> Result<Self> {
        let spec = Self {
            marginals: vec![marginal; d],
            rng_seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.marginals.is_empty() {
            return Err(Error::InvalidSource("need at least one input dimension".into()));
        }
        self.marginals.iter().try_for_each(Marginal::validate)
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn with_seed(&self, rng_seed: u64) -> Self {
        Self {
            marginals: self.marginals.clone(),
            rng_seed,
        }
    }
}

/// `n × d` draws; column `j` comes from its own sub-stream of the seed.
pub fn sample_source<T: Scalar>(spec: &SourceSpec, n: usize) -> Result<Array2<T>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let mut out = Array2::zeros((n, spec.dim()));
    for (j, marginal) in spec.marginals.iter().enumerate() {
        let mut rng = rng_from_seed(derive_seed(spec.rng_seed, j as u64));
        for v in out.column_mut(j) {
            *v = T::from_f64_lossy(marginal.sample(&mut rng));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantile::Ecdf;
    use proptest::prelude::*;

    fn all_kinds() -> Vec<CorruptionSpec<f64>> {
        vec![
            CorruptionSpec::affine(2.0, 1.0).unwrap(),
            CorruptionSpec::cubic(1.0, 1.0).unwrap(),
            CorruptionSpec::cubic(0.3, 0.5).unwrap(),
            CorruptionSpec::tanh_warp(1.0, 0.5).unwrap(),
            CorruptionSpec::tanh_warp(2.0, -0.45).unwrap(),
            CorruptionSpec::compose(vec![
                CorruptionSpec::cubic(0.2, 1.0).unwrap(),
                CorruptionSpec::tanh_warp(0.7, 1.5).unwrap(),
                CorruptionSpec::affine(0.5, -3.0).unwrap(),
            ])
            .unwrap(),
        ]
    }

    #[test]
    fn forward_examples() {
        let id = CorruptionSpec::affine(1.0, 0.0).unwrap();
        assert_eq!(corrupt(&id, 3.7), 3.7);
        assert_eq!(corrupt(&CorruptionSpec::cubic(1.0, 1.0).unwrap(), 2.0), 10.0);
        assert_eq!(corrupt(&CorruptionSpec::tanh_warp(1.0, 0.5).unwrap(), 0.0), 0.0);
    }

    #[test]
    fn construction_enforces_monotonicity() {
        assert!(CorruptionSpec::affine(0.0, 1.0).is_err());
        assert!(CorruptionSpec::cubic(1.0, 0.0).is_err());
        assert!(CorruptionSpec::cubic(-0.1, 1.0).is_err());
        assert!(CorruptionSpec::tanh_warp(1.0, -1.0).is_err());
        assert!(CorruptionSpec::tanh_warp(0.0, 0.5).is_err());
        assert!(CorruptionSpec::compose(vec![CorruptionSpec::Affine { scale: -1.0, shift: 0.0 }]).is_err());
    }

    #[test]
    fn inverse_examples() {
        let a = CorruptionSpec::affine(2.0, 1.0).unwrap();
        assert_eq!(invert(&a, 5.0, 1e-12).unwrap(), 2.0);
        let c = CorruptionSpec::cubic(1.0, 1.0).unwrap();
        let x: f64 = invert(&c, 10.0, 1e-10).unwrap();
        assert!((x - 2.0).abs() < 1e-9);
        assert!(invert(&c, f64::NAN, 1e-10).is_err());
        assert!(invert(&c, f64::INFINITY, 1e-10).is_err());
    }

    #[test]
    fn round_trip_on_random_points() {
        let mut rng = rng_from_seed(8);
        for spec in all_kinds() {
            for _ in 0..1_000 {
                let x = rng.random_range(-6.0..6.0);
                let back = invert(&spec, spec.apply(x), 1e-12).unwrap();
                assert!((spec.apply(back) - spec.apply(x)).abs() <= 1e-12);
                assert!((back - x).abs() <= 1e-9, "{spec:?}: {x} -> {back}");
            }
        }
    }

    #[test]
    fn strictly_increasing_on_dense_grid() {
        for spec in all_kinds() {
            let grid: Vec<f64> = (0..10_001).map(|i| -10.0 + 20.0 * i as f64 / 10_000.0).collect();
            assert!(grid.windows(2).all(|w| spec.apply(w[0]) < spec.apply(w[1])), "{spec:?}");
        }
    }

    #[test]
    fn ecdf_pushforward_is_exact() {
        let spec = SourceSpec::iid(Marginal::StandardNormal, 1, 4).unwrap();
        let s = sample_source::<f64>(&spec, 2_000).unwrap().column(0).to_vec();
        for g in all_kinds() {
            let gs: Vec<f64> = s.iter().map(|&v| g.apply(v)).collect();
            let (es, eg) = (Ecdf::new(&s).unwrap(), Ecdf::new(&gs).unwrap());
            for t in [-2.5, -1.0, -0.1, 0.0, 0.3, 1.7, 3.0] {
                assert_eq!(eg.eval(g.apply(t)), es.eval(t));
            }
        }
    }

    #[test]
    fn normal_sampling_moments() {
        let spec = SourceSpec::iid(Marginal::StandardNormal, 1, 123).unwrap();
        let x = sample_source::<f64>(&spec, 100_000).unwrap();
        let col = x.column(0);
        let mean = col.mean().unwrap();
        let std = col.std(0.0);
        assert!(mean.abs() < 0.02 && (std - 1.0).abs() < 0.02, "{mean} {std}");
    }

    #[test]
    fn uniform_support_and_determinism() {
        let spec = SourceSpec::iid(Marginal::UniformInterval { lo: 0.0, hi: 1.0 }, 3, 9).unwrap();
        let a = sample_source::<f64>(&spec, 10).unwrap();
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a, sample_source::<f64>(&spec, 10).unwrap());
        let tn = SourceSpec::iid(Marginal::TruncatedNormal { lo: -2.0, hi: 2.0 }, 1, 1).unwrap();
        let t = sample_source::<f32>(&tn, 5_000).unwrap();
        assert!(t.iter().all(|v| (-2.0..=2.0).contains(v)));
    }

    #[test]
    fn invalid_sources() {
        assert!(Marginal::UniformInterval { lo: 1.0, hi: 1.0 }.validate().is_err());
        assert!(Marginal::GaussianMixture {
            weights: vec![0.5, 0.6],
            means: vec![0.0, 1.0],
            stds: vec![1.0, 1.0]
        }
        .validate()
        .is_err());
        assert!(Marginal::GaussianMixture {
            weights: vec![1.0],
            means: vec![0.0],
            stds: vec![0.0]
        }
        .validate()
        .is_err());
    }

    #[test]
    fn marginal_quantile_inverts_cdf() {
        let ms = [
            Marginal::StandardNormal,
            Marginal::TruncatedNormal { lo: -2.0, hi: 2.0 },
            Marginal::TruncatedNormal { lo: 0.5, hi: 3.0 },
            Marginal::UniformInterval { lo: -1.0, hi: 4.0 },
            Marginal::GaussianMixture {
                weights: vec![0.3, 0.7],
                means: vec![-2.0, 1.5],
                stds: vec![0.5, 0.8],
            },
        ];
        for m in ms {
            for i in 1..200 {
                let u = i as f64 / 200.0;
                assert!((m.cdf(m.quantile(u)) - u).abs() < 1e-12, "{m:?} at {u}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn constructed_maps_are_increasing(alpha in 0f64..3.0, scale in 0.01f64..4.0, gain in 0.01f64..5.0, amp_frac in -0.99f64..3.0, x in -10f64..10.0, dx in 1e-3f64..5.0) {
            let specs = [
                CorruptionSpec::cubic(alpha, scale).unwrap(),
                CorruptionSpec::tanh_warp(gain, amp_frac / gain).unwrap(),
                CorruptionSpec::affine(scale, alpha).unwrap(),
            ];
            for s in &specs {
                prop_assert!(s.apply(x) < s.apply(x + dx));
                let back = s.invert(s.apply(x), 1e-11).unwrap();
                prop_assert!((s.apply(back) - s.apply(x)).abs() <= 1e-11);
            }
        }
    }
}
