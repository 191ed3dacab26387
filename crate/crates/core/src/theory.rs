//! Numerical checks of the finite-sample analysis: error measurement,
//! concentration and bound evaluation, rate fitting, and the small-batch
//! extreme-quantile experiment.
//!
//! Everything here works in `f64`.

use ndarray::ArrayView2;
use rand::seq::index;
use rayon::prelude::*;

use crate::corruption::{sample_source, Marginal, SourceSpec};
use crate::error::{Error, Result};
use crate::quantile::{compute_quantile_profile, QuantileProfile};
use crate::seed::{derive_seed, rng_from_seed};
use crate::special::{normal_cdf, normal_pdf};
use crate::Scalar;

/// Per-column mean squared error and its sum.
#[derive(Debug, Clone, PartialEq)]
pub struct MseReport {
    pub per_neuron: Vec<f64>,
    pub total: f64,
    pub n_eval: usize,
}

pub fn mse_against_reference<T: Scalar>(adapted: ArrayView2<'_, T>, reference: ArrayView2<'_, T>) -> Result<MseReport> {
    if adapted.dim() != reference.dim() {
        return Err(Error::DimensionMismatch(format!(
            "adapted is {:?}, reference is {:?}",
            adapted.dim(),
            reference.dim()
        )));
    }
    let n = adapted.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("no evaluation rows".into()));
    }
    let per_neuron: Vec<f64> = adapted
        .columns()
        .into_iter()
        .zip(reference.columns())
        .map(|(a, r)| {
            a.iter()
                .zip(r.iter())
                .map(|(x, y)| {
                    let d = x.to_f64_lossy() - y.to_f64_lossy();
                    d * d
                })
                .sum::<f64>()
                / n as f64
        })
        .collect();
    Ok(MseReport {
        total: per_neuron.iter().sum(),
        per_neuron,
        n_eval: n,
    })
}

/// `sqrt(ln(2/δ) / (2n))`.
pub fn dkw_epsilon(n: usize, delta: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be ≥ 1".into()));
    }
    check_delta(delta)?;
    Ok(((2.0 / delta).ln() / (2.0 * n as f64)).sqrt())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("δ must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// Density regularity of a source marginal: `f_min ≤ f ≤ f_max` on the
/// support and `|f'| ≤ lipschitz_density`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityConstants {
    pub f_min: f64,
    pub f_max: f64,
    pub lipschitz_density: f64,
}

impl RegularityConstants {
    pub fn new(f_min: f64, f_max: f64, lipschitz_density: f64) -> Result<Self> {
        if !(f_min > 0.0 && f_min <= f_max && f_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < f_min ≤ f_max, got ({f_min}, {f_max})"
            )));
        }
        if !(lipschitz_density >= 0.0 && lipschitz_density.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "density Lipschitz constant must be ≥ 0, got {lipschitz_density}"
            )));
        }
        Ok(Self {
            f_min,
            f_max,
            lipschitz_density,
        })
    }

    /// Closed-form constants for `N(0, 1)` restricted to `[lo, hi]`.
    ///
    /// With `Z = Φ(hi) − Φ(lo)`: the density minimum sits at the endpoint
    /// farther from zero, the maximum at the point closest to zero, and
    /// `|f'(x)| = |x| φ(x) / Z` peaks at `|x| = 1` when that is reachable.
    pub fn truncated_normal(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!("need finite lo < hi, got [{lo}, {hi}]")));
        }
        let z = normal_cdf(hi) - normal_cdf(lo);
        let f_min = normal_pdf(lo).min(normal_pdf(hi)) / z;
        let f_max = normal_pdf(0.0f64.clamp(lo, hi)) / z;
        let slope = |x: f64| x.abs() * normal_pdf(x) / z;
        let mut l = slope(lo).max(slope(hi));
        for x in [-1.0, 1.0] {
            if (lo..=hi).contains(&x) {
                l = l.max(slope(x));
            }
        }
        Self::new(f_min, f_max, l)
    }

    /// `L / f_min³`, a bound on `|H''|` for the quantile function `H`.
    pub fn quantile_curvature_bound(&self) -> f64 {
        self.lipschitz_density / self.f_min.powi(3)
    }
}

/// Exact `sup |H''|` for the quantile function of `N(0, 1)` restricted to
/// `[lo, hi]`: `|x| Z² / φ(x)²`, increasing in `|x|`, so attained at an
/// endpoint.
pub fn truncated_normal_quantile_curvature(lo: f64, hi: f64) -> f64 {
    let z = normal_cdf(hi) - normal_cdf(lo);
    let at = |x: f64| x.abs() * z * z / (normal_pdf(x) * normal_pdf(x));
    at(lo).max(at(hi))
}

/// The three terms of the per-neuron bound and their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTerms {
    pub discretization: f64,
    pub source_sampling: f64,
    pub target_sampling: f64,
    pub total: f64,
}

/// `3 (L / (8 f_min³))² K⁻⁴ + (3 / f_min²) ε(δ, n_S)² + (3 / f_min²) ε(δ, n_T)²`.
///
/// Sample sizes are reals so the infinite-sample limit can be evaluated.
pub fn theorem1_bound(c: &RegularityConstants, k: usize, n_s: f64, n_t: f64, delta: f64) -> Result<BoundTerms> {
    if !(c.f_min > 0.0) {
        return Err(Error::InvalidArgument(format!("f_min must be > 0, got {}", c.f_min)));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("K must be ≥ 1".into()));
    }
    check_delta(delta)?;
    for n in [n_s, n_t] {
        if !(n >= 1.0) {
            return Err(Error::InvalidArgument(format!("sample sizes must be ≥ 1, got {n}")));
        }
    }
    let eps_sq = |n: f64| (2.0 / delta).ln() / (2.0 * n);
    let disc = 3.0 * (c.lipschitz_density / (8.0 * c.f_min.powi(3))).powi(2) * (k as f64).powi(-4);
    let w = 3.0 / (c.f_min * c.f_min);
    let (s, t) = (w * eps_sq(n_s), w * eps_sq(n_t));
    Ok(BoundTerms {
        discretization: disc,
        source_sampling: s,
        target_sampling: t,
        total: disc + s + t,
    })
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: Vec<(f64, f64)>,
}

pub fn fit_loglog_rate(xs: &[f64], ys: &[f64]) -> Result<RateFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch(format!("{} x values, {} y values", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(Error::InsufficientSamples {
            needed: 3,
            got: xs.len(),
        });
    }
    if let Some(v) = xs.iter().chain(ys).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!("log-log fit needs positive finite values, got {v}")));
    }
    let points: Vec<(f64, f64)> = xs.iter().zip(ys).map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("x values must not all be equal".into()));
    }
    let slope = sxy / sxx;
    // A flat series is fitted perfectly by a flat line.
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(RateFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        points,
    })
}

/// Piecewise-linear interpolation of knot values at levels `j / K`.
pub fn interpolate_knots(knots: &[f64], u: f64) -> f64 {
    let k = knots.len() - 1;
    let pos = u.clamp(0.0, 1.0) * k as f64;
    let j = (pos.floor() as usize).min(k - 1);
    let w = pos - j as f64;
    if w == 0.0 {
        return knots[j];
    }
    knots[j] + w * (knots[j + 1] - knots[j])
}

fn exact_knots(h: &impl Fn(f64) -> f64, k: usize) -> Vec<f64> {
    (0..=k).map(|j| h(j as f64 / k as f64)).collect()
}

/// `sup_u |H(u) − H_K(u)|` over `grid + 1` equally spaced levels, where `H_K`
/// interpolates `H` at the levels `j / K`.
pub fn discretization_gap(exact_quantile: impl Fn(f64) -> f64, k: usize, grid: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be ≥ 1".into()));
    }
    if grid < 10 * k {
        return Err(Error::InvalidArgument(format!("grid must be ≥ 10·K = {}, got {grid}", 10 * k)));
    }
    let knots = exact_knots(&exact_quantile, k);
    if knots.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("quantile function is not finite at 0 or 1".into()));
    }
    Ok((0..=grid)
        .map(|i| {
            let u = i as f64 / grid as f64;
            (exact_quantile(u) - interpolate_knots(&knots, u)).abs()
        })
        .fold(0.0, f64::max))
}

/// `(‖H̃_K − H_K‖∞ on the grid, max_j |q̂_j − H(j/K)|)` for estimated knots
/// `q̂` against the exact quantile function.
pub fn knot_stability(estimated_knots: &[f64], exact_quantile: impl Fn(f64) -> f64, grid: usize) -> Result<(f64, f64)> {
    if estimated_knots.len() < 2 {
        return Err(Error::InvalidArgument("need at least two knots".into()));
    }
    let k = estimated_knots.len() - 1;
    let exact = exact_knots(&exact_quantile, k);
    let knot_err = estimated_knots
        .iter()
        .zip(&exact)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let sup = (0..=grid)
        .map(|i| {
            let u = i as f64 / grid as f64;
            (interpolate_knots(estimated_knots, u) - interpolate_knots(&exact, u)).abs()
        })
        .fold(0.0, f64::max);
    Ok((sup, knot_err))
}

/// The finite-sample map `z ↦ H̃_K(F̂_Q(z))`: empirical target CDF followed by
/// the interpolated empirical source quantile function.
#[derive(Debug, Clone, PartialEq)]
pub struct PracticalAqr {
    source_knots: Vec<f64>,
    target_sorted: Vec<f64>,
}

impl PracticalAqr {
    pub fn new(source_samples: &[f64], target_samples: &[f64], k: usize) -> Result<Self> {
        let source = compute_quantile_profile(source_samples, k)?;
        let mut target_sorted = target_samples.to_vec();
        if let Some(index) = target_sorted.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput { index });
        }
        if target_sorted.is_empty() {
            return Err(Error::InsufficientSamples { needed: 1, got: 0 });
        }
        target_sorted.sort_by(f64::total_cmp);
        Ok(Self {
            source_knots: source.knots().to_vec(),
            target_sorted,
        })
    }

    pub fn source_knots(&self) -> &[f64] {
        &self.source_knots
    }

    pub fn target_ecdf(&self, z: f64) -> f64 {
        self.target_sorted.partition_point(|v| *v <= z) as f64 / self.target_sorted.len() as f64
    }

    pub fn source_quantile(&self, u: f64) -> f64 {
        interpolate_knots(&self.source_knots, u)
    }

    pub fn apply(&self, z: f64) -> f64 {
        self.source_quantile(self.target_ecdf(z))
    }
}

/// The two-term split of the practical map's error at one point:
/// `T(z) − H(F_Q(z)) = [H̃_K(F̂_Q(z)) − H(F̂_Q(z))] + [H(F̂_Q(z)) − H(F_Q(z))]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorDecomposition {
    pub total: f64,
    pub quantile_term: f64,
    pub cdf_term: f64,
}

pub fn decompose_error(
    map: &PracticalAqr,
    z: f64,
    exact_quantile: impl Fn(f64) -> f64,
    target_cdf: impl Fn(f64) -> f64,
) -> ErrorDecomposition {
    let u_hat = map.target_ecdf(z);
    let u = target_cdf(z);
    let estimate = map.source_quantile(u_hat);
    let (h_hat, h) = (exact_quantile(u_hat), exact_quantile(u));
    ErrorDecomposition {
        total: estimate - h,
        quantile_term: estimate - h_hat,
        cdf_term: h_hat - h,
    }
}

/// `(F(x), ∫_{-∞}^x t f(t) dt, ∫_{-∞}^x t² f(t) dt)` for a marginal.
pub fn partial_moments(m: &Marginal, x: f64) -> (f64, f64, f64) {
    // Φ, ∫ t φ and ∫ t² φ up to y, for the standard normal.
    let std_normal = |y: f64| {
        if y == f64::NEG_INFINITY {
            (0.0, 0.0, 0.0)
        } else if y == f64::INFINITY {
            (1.0, 0.0, 1.0)
        } else {
            let (cdf, pdf) = (normal_cdf(y), normal_pdf(y));
            (cdf, -pdf, cdf - y * pdf)
        }
    };
    match m {
        Marginal::StandardNormal => std_normal(x),
        Marginal::TruncatedNormal { lo, hi } => {
            let z = normal_cdf(*hi) - normal_cdf(*lo);
            let (a, b) = (std_normal(*lo), std_normal(x.clamp(*lo, *hi)));
            ((b.0 - a.0) / z, (b.1 - a.1) / z, (b.2 - a.2) / z)
        }
        Marginal::UniformInterval { lo, hi } => {
            let (w, y) = (hi - lo, x.clamp(*lo, *hi));
            ((y - lo) / w, (y * y - lo * lo) / (2.0 * w), (y.powi(3) - lo.powi(3)) / (3.0 * w))
        }
        Marginal::GaussianMixture { weights, means, stds } => {
            let mut acc = (0.0, 0.0, 0.0);
            for ((w, mu), sd) in weights.iter().zip(means).zip(stds) {
                let (p, m1, m2) = std_normal((x - mu) / sd);
                acc.0 += w * p;
                acc.1 += w * (mu * p + sd * m1);
                acc.2 += w * (mu * mu * p + 2.0 * mu * sd * m1 + sd * sd * m2);
            }
            acc
        }
    }
}

/// Population MSE `E_{x∼P}[(T(g(x)) − x)²]` of the practical map, computed
/// exactly.
///
/// `target_source_space` holds the target draws pulled back through the
/// corruption (`g⁻¹` of each target value). Because `g` is strictly
/// increasing, `F̂_Q(g(x))` equals the ECDF of those pre-images at `x`, so the
/// corruption drops out. The map output is then constant between
/// consecutive pre-images and each piece is integrated with the partial
/// moments of `P`.
pub fn practical_aqr_population_mse(
    source_marginal: &Marginal,
    source_samples: &[f64],
    target_source_space: &[f64],
    k: usize,
) -> Result<f64> {
    let map = PracticalAqr::new(source_samples, target_source_space, k)?;
    let t = &map.target_sorted;
    let n = t.len();
    let mut total = 0.0;
    let mut prev = partial_moments(source_marginal, f64::NEG_INFINITY);
    for i in 0..=n {
        let upper = if i < n { t[i] } else { f64::INFINITY };
        let cur = partial_moments(source_marginal, upper);
        let c = map.source_quantile(i as f64 / n as f64);
        let (df, d1, d2) = (cur.0 - prev.0, cur.1 - prev.1, cur.2 - prev.2);
        total += c * c * df - 2.0 * c * d1 + d2;
        prev = cur;
    }
    Ok(total.max(0.0))
}

/// Per-level deviations of small-batch knots from a reference profile.
#[derive(Debug, Clone, PartialEq)]
pub struct TailDeviation {
    pub reference: QuantileProfile<f64>,
    /// `deviations[j][trial]` = small-batch knot `j` minus reference knot `j`.
    pub deviations: Vec<Vec<f64>>,
}

impl TailDeviation {
    pub fn mean_at(&self, level: usize) -> f64 {
        let d = &self.deviations[level];
        d.iter().sum::<f64>() / d.len() as f64
    }

    pub fn mean_abs_at(&self, level: usize) -> f64 {
        let d = &self.deviations[level];
        d.iter().map(|v| v.abs()).sum::<f64>() / d.len() as f64
    }
}

/// Draws a reference pool of `reference_n` values from the first marginal of
/// `dist`, then for each trial subsamples `small_n` of them without
/// replacement and records knot deviations against the pool's profile.
pub fn tail_deviation_experiment(
    reference_n: usize,
    small_n: usize,
    trials: usize,
    dist: &SourceSpec,
    k: usize,
    rng_seed: u64,
) -> Result<TailDeviation> {
    if trials < 2 {
        return Err(Error::InvalidArgument(format!("trials must be ≥ 2, got {trials}")));
    }
    if small_n > reference_n {
        return Err(Error::BatchExceedsPopulation {
            batch: small_n,
            population: reference_n,
        });
    }
    let marginal = dist
        .marginals
        .first()
        .ok_or_else(|| Error::InvalidSource("no marginals".into()))?;
    let one_dim = SourceSpec {
        marginals: vec![marginal.clone()],
        rng_seed: derive_seed(rng_seed, u64::MAX),
    };
    let pool = sample_source::<f64>(&one_dim, reference_n)?.column(0).to_vec();
    let reference = compute_quantile_profile(&pool, k)?;
    let profiles = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = rng_from_seed(derive_seed(rng_seed, trial as u64));
            let batch: Vec<f64> = index::sample(&mut rng, reference_n, small_n)
                .into_iter()
                .map(|i| pool[i])
                .collect();
            compute_quantile_profile(&batch, k)
        })
        .collect::<Result<Vec<_>>>()?;
    let deviations = (0..=k)
        .map(|j| profiles.iter().map(|p| p.knots()[j] - reference.knots()[j]).collect())
        .collect();
    Ok(TailDeviation { reference, deviations })
}
