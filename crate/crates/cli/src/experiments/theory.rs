//! Finite-sample theory on the truncated-normal testbed: rate sweeps, bound
//! coverage, discretization and knot-stability checks, the error
//! decomposition identity, and DKW concentration.
//!
//! Target draws are generated directly in source space: the corruption is
//! strictly increasing, so the practical map's population error does not
//! depend on it.

use aqr::corruption::{sample_source, CorruptionSpec, Marginal, SourceSpec};
use aqr::quantile::{compute_quantile_profile, Ecdf};
use aqr::seed::{derive_seed, derive_seed2};
use aqr::special::normal_cdf;
use aqr::theory::{
    decompose_error, discretization_gap, dkw_epsilon, fit_loglog_rate, knot_stability,
    practical_aqr_population_mse, theorem1_bound, truncated_normal_quantile_curvature, PracticalAqr,
    RegularityConstants,
};
use rayon::prelude::*;

use super::mean_std;
use crate::config::{ExperimentConfig, TheoryPart};
use crate::report::{line_plot, CsvReport, OutputSet, PlotStyle, Series};
use crate::CliError;

/// `(K, n_source, n_target)`.
type SweepPoint = (usize, usize, usize);

const SWEEP_K: u64 = 10;
const SWEEP_NS: u64 = 11;
const SWEEP_NT: u64 = 12;
const BOUND: u64 = 20;
const LEMMA: u64 = 30;
const DKW: u64 = 40;

/// Sample size for the knot-stability and decomposition checks.
const LEMMA_N: usize = 20_000;
/// Evaluation points for the decomposition identity.
const LEMMA_POINTS: usize = 1_000;

fn draws(m: &Marginal, n: usize, seed: u64) -> Result<Vec<f64>, CliError> {
    Ok(sample_source::<f64>(&SourceSpec::iid(m.clone(), 1, seed)?, n)?.column(0).to_vec())
}

pub fn run(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<(), CliError> {
    let tn = Marginal::TruncatedNormal {
        lo: -cfg.theory.truncation,
        hi: cfg.theory.truncation,
    };
    let parts = &cfg.theory.parts;
    if parts.contains(&TheoryPart::Rates) {
        rates(cfg, &tn, out)?;
    }
    if parts.contains(&TheoryPart::Bound) {
        bound(cfg, &tn, out)?;
    }
    if parts.contains(&TheoryPart::Lemmas) {
        lemmas(cfg, &tn, out)?;
    }
    if parts.contains(&TheoryPart::Dkw) {
        dkw(cfg, out)?;
    }
    Ok(())
}

/// Rate sweeps over K, n_S and n_T.
fn rates(cfg: &ExperimentConfig, tn: &Marginal, out: &mut OutputSet) -> Result<(), CliError> {
    let (t, master) = (&cfg.theory, cfg.master_seed);

    // Rate sweeps. Trials share seeds across sweep points, so the draws of a
    // smaller n are a prefix of a larger one's.
    let n_max = *t.ns.iter().max().expect("validated non-empty");
    let sweeps: [(&str, u64, Vec<SweepPoint>); 3] = [
        ("K", SWEEP_K, t.ks.iter().map(|&k| (k, t.k_sweep_n, t.k_sweep_n)).collect()),
        ("n_source", SWEEP_NS, t.ns.iter().map(|&n| (t.n_sweep_k, n, n_max)).collect()),
        ("n_target", SWEEP_NT, t.ns.iter().map(|&n| (t.n_sweep_k, n_max, n)).collect()),
    ];
    let mut rates = CsvReport::new(&["sweep", "x", "K", "n_source", "n_target", "trials", "mean_mse", "std_mse"]);
    let mut rate_trials = CsvReport::new(&["sweep", "x", "trial", "mse"]);
    let mut fits = CsvReport::new(&["sweep", "slope", "intercept", "r_squared", "points"]);
    let mut series = Vec::new();
    for (name, id, points) in &sweeps {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &(k, ns, nt) in points {
            let mses = (0..t.rate_trials as u64)
                .into_par_iter()
                .map(|trial| {
                    let seed = derive_seed2(master, *id, trial);
                    let s = draws(tn, ns, derive_seed(seed, 0))?;
                    let tg = draws(tn, nt, derive_seed(seed, 1))?;
                    Ok(practical_aqr_population_mse(tn, &s, &tg, k)?)
                })
                .collect::<Result<Vec<f64>, CliError>>()?;
            let x = match *name {
                "K" => k,
                "n_source" => ns,
                _ => nt,
            };
            for (trial, &m) in mses.iter().enumerate() {
                rate_trials.push(vec![(*name).into(), x.into(), trial.into(), m.into()]);
            }
            let (mean, sd) = mean_std(&mses);
            rates.push(vec![
                (*name).into(),
                x.into(),
                k.into(),
                ns.into(),
                nt.into(),
                t.rate_trials.into(),
                mean.into(),
                sd.into(),
            ]);
            xs.push(x as f64);
            ys.push(mean);
        }
        let fit = fit_loglog_rate(&xs, &ys)?;
        fits.push(vec![
            (*name).into(),
            fit.slope.into(),
            fit.intercept.into(),
            fit.r_squared.into(),
            xs.len().into(),
        ]);
        series.push(Series::new(format!("{name} (slope {:.2})", fit.slope), xs.into_iter().zip(ys).collect()));
    }
    out.write_csv("rates.csv", &rates)?;
    out.write_csv("rate_trials.csv", &rate_trials)?;
    out.write_csv("fits.csv", &fits)?;
    let n_series = series.split_off(1);
    out.write_svg(
        "rate_k.svg",
        &line_plot(&series, &PlotStyle::new("Practical AQR population MSE", "K", "MSE").log_log()),
    )?;
    out.write_svg(
        "rate_n.svg",
        &line_plot(&n_series, &PlotStyle::new("Practical AQR population MSE", "sample size", "MSE").log_log()),
    )
}

/// Bound coverage.
fn bound(cfg: &ExperimentConfig, tn: &Marginal, out: &mut OutputSet) -> Result<(), CliError> {
    let (t, master) = (&cfg.theory, cfg.master_seed);
    let constants = RegularityConstants::truncated_normal(-t.truncation, t.truncation)?;
    let mut bound_rows = CsvReport::new(&["setting", "K", "n_source", "n_target", "trial", "mse", "bound", "covered"]);
    let mut bound_summary = CsvReport::new(&[
        "K",
        "n_source",
        "n_target",
        "delta",
        "bound",
        "discretization_term",
        "source_term",
        "target_term",
        "trials",
        "covered",
        "coverage",
        "mean_mse",
        "max_mse",
    ]);
    for (i, b) in t.bound_settings.iter().enumerate() {
        let terms = theorem1_bound(&constants, b.k, b.n_source as f64, b.n_target as f64, t.delta)?;
        let mses = (0..t.bound_trials as u64)
            .into_par_iter()
            .map(|trial| {
                let seed = derive_seed2(derive_seed(master, BOUND), i as u64, trial);
                let s = draws(tn, b.n_source, derive_seed(seed, 0))?;
                let tg = draws(tn, b.n_target, derive_seed(seed, 1))?;
                Ok(practical_aqr_population_mse(tn, &s, &tg, b.k)?)
            })
            .collect::<Result<Vec<f64>, CliError>>()?;
        let mut covered = 0usize;
        for (trial, &m) in mses.iter().enumerate() {
            let ok = m <= terms.total;
            covered += ok as usize;
            bound_rows.push(vec![
                i.into(),
                b.k.into(),
                b.n_source.into(),
                b.n_target.into(),
                trial.into(),
                m.into(),
                terms.total.into(),
                ok.into(),
            ]);
        }
        bound_summary.push(vec![
            b.k.into(),
            b.n_source.into(),
            b.n_target.into(),
            t.delta.into(),
            terms.total.into(),
            terms.discretization.into(),
            terms.source_sampling.into(),
            terms.target_sampling.into(),
            mses.len().into(),
            covered.into(),
            (covered as f64 / mses.len() as f64).into(),
            mean_std(&mses).0.into(),
            mses.iter().copied().fold(0.0, f64::max).into(),
        ]);
    }
    out.write_csv("bound.csv", &bound_rows)?;
    out.write_csv("bound_summary.csv", &bound_summary)
}

/// Discretization gap against the curvature bound, knot stability, and the
/// decomposition identity.
fn lemmas(cfg: &ExperimentConfig, tn: &Marginal, out: &mut OutputSet) -> Result<(), CliError> {
    let (t, master) = (&cfg.theory, cfg.master_seed);
    let constants = RegularityConstants::truncated_normal(-t.truncation, t.truncation)?;
    let exact_curv = truncated_normal_quantile_curvature(-t.truncation, t.truncation);
    let const_curv = constants.quantile_curvature_bound();
    let mut discretization = CsvReport::new(&[
        "function",
        "K",
        "grid",
        "gap",
        "bound_regularity",
        "bound_exact_curvature",
        "within_bound",
    ]);
    let mut gap_series = (Vec::new(), Vec::new());
    for &k in &t.gap_ks {
        let grid = t.gap_grid_factor * k;
        let gap = discretization_gap(|u| tn.quantile(u), k, grid)?;
        let kk = (k as f64).powi(-2);
        let (b_reg, b_exact) = (const_curv / 8.0 * kk, exact_curv / 8.0 * kk);
        discretization.push(vec![
            "truncated-normal".into(),
            k.into(),
            grid.into(),
            gap.into(),
            b_reg.into(),
            b_exact.into(),
            (gap <= b_reg).into(),
        ]);
        gap_series.0.push((k as f64, gap));
        gap_series.1.push((k as f64, b_reg));
    }
    let quad_gap = discretization_gap(|u| u * u, 2, 2 * t.gap_grid_factor)?;
    let quad_bound = 2.0 / 8.0 * 0.25;
    discretization.push(vec![
        "quadratic".into(),
        2usize.into(),
        (2 * t.gap_grid_factor).into(),
        quad_gap.into(),
        quad_bound.into(),
        quad_bound.into(),
        (quad_gap <= quad_bound).into(),
    ]);
    out.write_csv("discretization.csv", &discretization)?;
    out.write_svg(
        "discretization.svg",
        &line_plot(
            &[Series::new("gap", gap_series.0), Series::new("bound", gap_series.1)],
            &PlotStyle::new("Quantile discretization gap", "K", "sup gap").log_log(),
        ),
    )?;

    // One draw per K for knot stability and the decomposition identity.
    let cubic = CorruptionSpec::CubicMonotone { alpha: 1.0, scale: 1.0 };
    let mut stability = CsvReport::new(&["K", "n", "sup_gap", "max_knot_error", "holds"]);
    let mut decomposition = CsvReport::new(&["K", "n", "points", "max_abs_residual"]);
    for (i, &k) in t.gap_ks.iter().enumerate() {
        let seed = derive_seed2(master, LEMMA, i as u64);
        let s = draws(tn, LEMMA_N, derive_seed(seed, 0))?;
        let profile = compute_quantile_profile(&s, k)?;
        let (sup, knot_err) = knot_stability(profile.knots(), |u| tn.quantile(u), t.gap_grid_factor * k)?;
        stability.push(vec![k.into(), LEMMA_N.into(), sup.into(), knot_err.into(), (sup <= knot_err).into()]);

        let target: Vec<f64> = draws(tn, LEMMA_N, derive_seed(seed, 1))?.iter().map(|&x| cubic.apply(x)).collect();
        let map = PracticalAqr::new(&s, &target, k)?;
        let lo = cubic.apply(-t.truncation);
        let hi = cubic.apply(t.truncation);
        let cdf = |z: f64| tn.cdf(cubic.invert(z, 1e-13).unwrap_or(f64::NAN));
        let mut worst: f64 = 0.0;
        for p in 0..LEMMA_POINTS {
            let z = lo + (hi - lo) * (p as f64 + 0.5) / LEMMA_POINTS as f64;
            let d = decompose_error(&map, z, |u| tn.quantile(u), cdf);
            worst = worst.max((d.total - (d.quantile_term + d.cdf_term)).abs());
        }
        decomposition.push(vec![k.into(), LEMMA_N.into(), LEMMA_POINTS.into(), worst.into()]);
    }
    out.write_csv("knot_stability.csv", &stability)?;
    out.write_csv("decomposition.csv", &decomposition)
}

/// DKW concentration for the standard normal.
fn dkw(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<(), CliError> {
    let (t, master) = (&cfg.theory, cfg.master_seed);
    let eps = dkw_epsilon(t.dkw_n, t.dkw_delta)?;
    let sups = (0..t.dkw_trials as u64)
        .into_par_iter()
        .map(|trial| {
            let x = draws(&Marginal::StandardNormal, t.dkw_n, derive_seed2(master, DKW, trial))?;
            Ok(Ecdf::new(&x)?.sup_deviation(normal_cdf))
        })
        .collect::<Result<Vec<f64>, CliError>>()?;
    let mut dkw = CsvReport::new(&["trial", "sup_deviation", "exceeds"]);
    let mut exceed = 0usize;
    for (trial, &s) in sups.iter().enumerate() {
        exceed += (s > eps) as usize;
        dkw.push(vec![trial.into(), s.into(), (s > eps).into()]);
    }
    let mut dkw_summary = CsvReport::new(&["n", "delta", "epsilon", "trials", "exceed_count", "exceed_fraction"]);
    dkw_summary.push(vec![
        t.dkw_n.into(),
        t.dkw_delta.into(),
        eps.into(),
        t.dkw_trials.into(),
        exceed.into(),
        (exceed as f64 / t.dkw_trials as f64).into(),
    ]);
    out.write_csv("dkw.csv", &dkw)?;
    out.write_csv("dkw_summary.csv", &dkw_summary)
}
