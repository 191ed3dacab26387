//! Invariant suites, each run for a fixed number of generated cases with a
//! deterministic generator.

use aqr::adaptation::{
    adapt_batch, oracle_aqr_two_sided, setup_phase, statistics_from_json, statistics_to_json, ttn_transform,
    AdaptationConfig,
};
use aqr::corruption::{sample_source, CorruptionSpec, Marginal, SourceSpec};
use aqr::net::{build_mlp, build_one_hidden_mlp, Activation, Network};
use aqr::quantile::{compute_quantile_profile, QuantileProfile};
use aqr::special::{normal_cdf, probit};
use aqr::tails::{calibrate_average_sample_tails, GaussianFit, SampledTailEstimate, TailRule, TailStrategy};
use aqr::transform::QuantileMap;
use aqr_cli::report::{Cell, CsvReport};
use ndarray::Array2;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRng, TestRunner};

pub const CASES: u32 = 1_000;

type Check = Result<(), TestCaseError>;

fn runner() -> TestRunner {
    let config = Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    };
    let rng = TestRng::deterministic_rng(config.rng_algorithm);
    TestRunner::new_with_rng(config, rng)
}

fn run<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> Check) -> Result<(), String> {
    runner().run(&strategy, test).map_err(|e| e.to_string())
}

/// Non-decreasing knots, possibly with ties.
fn knots(k: usize) -> impl Strategy<Value = Vec<f64>> {
    (
        -50.0..50.0f64,
        prop::collection::vec(prop_oneof![1 => Just(0.0), 4 => 0.01..5.0f64], k),
    )
        .prop_map(|(start, steps)| {
            let mut v = vec![start];
            for s in steps {
                v.push(v[v.len() - 1] + s);
            }
            v
        })
}

/// Strictly increasing knots.
fn strict_knots(k: usize) -> impl Strategy<Value = Vec<f64>> {
    (-50.0..50.0f64, prop::collection::vec(0.05..5.0f64, k)).prop_map(|(start, steps)| {
        let mut v = vec![start];
        for s in steps {
            v.push(v[v.len() - 1] + s);
        }
        v
    })
}

fn profile(k: Vec<f64>) -> QuantileProfile<f64> {
    QuantileProfile::from_knots(k, 1_000).expect("valid knots")
}

fn rule(kind: usize, source: &[f64], a: f64, b: f64, c: f64, d: f64, n: usize) -> TailRule<f64> {
    let k = source.len() - 1;
    match kind {
        0 => TailRule::Standard,
        1 => TailRule::AverageSampleTails(SampledTailEstimate {
            low: source[0] - a,
            high: (source[k] + b).max(source[0] - a),
            batch_size: n,
            repeats: 10,
        }),
        2 => TailRule::NotCalibrated,
        3 => TailRule::Clipping,
        4 => TailRule::GaussianEstimation {
            source: GaussianFit { mean: a, std: c },
            target: GaussianFit { mean: b, std: d },
            plotting_n: n,
        },
        _ => TailRule::IntervalEstimation {
            source_std: c,
            target_std: d,
        },
    }
}

/// Piecewise transform is non-decreasing for every tail rule.
pub fn monotonicity() -> Result<(), String> {
    let s = (1usize..30).prop_flat_map(|k| {
        (
            knots(k),
            knots(k),
            0usize..6,
            (-3.0..5.0f64, -3.0..5.0f64, 0.0..10.0f64, 0.0..10.0f64, 2usize..2_000),
            prop::collection::vec(-300.0..300.0f64, 2..60),
        )
    });
    run(s, |(t, src, kind, (a, b, c, d, n), mut xs)| {
        let r = rule(kind, &src, a, b, c, d, n);
        let (tp, sp) = (profile(t.clone()), profile(src));
        let map = QuantileMap::new(&tp, &sp, r).map_err(|e| TestCaseError::fail(e.to_string()))?;
        xs.extend(t);
        xs.sort_by(f64::total_cmp);
        let ys: Vec<f64> = xs.iter().map(|&x| map.apply(x)).collect();
        for w in ys.windows(2) {
            prop_assert!(w[0] <= w[1], "rule {kind}: {} > {}", w[0], w[1]);
        }
        Ok(())
    })
}

/// Standard tails send each inner target knot to its source knot.
pub fn knot_mapping() -> Result<(), String> {
    let s = (2usize..60).prop_flat_map(|k| (strict_knots(k), knots(k)));
    run(s, |(t, src)| {
        let (tp, sp) = (profile(t.clone()), profile(src.clone()));
        let map = QuantileMap::new(&tp, &sp, TailRule::Standard).unwrap();
        for j in 1..t.len() - 1 {
            let y = map.apply(t[j]);
            prop_assert!((y - src[j]).abs() <= 1e-12 * (1.0 + src[j].abs()), "j = {j}: {y} vs {}", src[j]);
        }
        Ok(())
    })
}

/// Mapping target to source and back is the identity between the inner knots.
pub fn round_trip() -> Result<(), String> {
    let s = (2usize..60).prop_flat_map(|k| (strict_knots(k), strict_knots(k), prop::collection::vec(0.0..1.0f64, 1..20)));
    run(s, |(t, src, us)| {
        let (tp, sp) = (profile(t.clone()), profile(src));
        let fwd = QuantileMap::new(&tp, &sp, TailRule::Standard).unwrap();
        let back = QuantileMap::new(&sp, &tp, TailRule::Standard).unwrap();
        let k = t.len() - 1;
        let inner = t[1..k].iter().copied();
        let between = us.iter().map(|u| t[1] + u * (t[k - 1] - t[1]));
        for x in inner.chain(between) {
            let y = back.apply(fwd.apply(x));
            prop_assert!((y - x).abs() <= 1e-9 * (1.0 + x.abs()), "{x} -> {y}");
        }
        Ok(())
    })
}

/// Profiling the knots of a K-interval profile with the same K gives them back.
pub fn profile_idempotence() -> Result<(), String> {
    let s = (1usize..60, prop::collection::vec(-1e3..1e3f64, 2..300));
    run(s, |(k, xs)| {
        let p = compute_quantile_profile(&xs, k).unwrap();
        let again = compute_quantile_profile(p.knots(), k).unwrap();
        for (a, b) in p.knots().iter().zip(again.knots()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
        }
        Ok(())
    })
}

fn corruption() -> impl Strategy<Value = CorruptionSpec<f64>> {
    let leaf = prop_oneof![
        (0.1..5.0f64, -3.0..3.0f64).prop_map(|(s, b)| CorruptionSpec::affine(s, b).unwrap()),
        (0.0..2.0f64, 0.1..3.0f64).prop_map(|(a, s)| CorruptionSpec::cubic(a, s).unwrap()),
        (0.1..3.0f64, 0.0..3.0f64).prop_map(|(g, a)| CorruptionSpec::tanh_warp(g, a).unwrap()),
    ];
    prop_oneof![
        3 => leaf.clone(),
        1 => prop::collection::vec(leaf, 2..4).prop_map(|p| CorruptionSpec::compose(p).unwrap()),
    ]
}

/// Corruption maps are strictly increasing and invert to their input.
pub fn corruption_round_trip() -> Result<(), String> {
    run((corruption(), -20.0..20.0f64, 1e-6..5.0f64), |(g, x, dx)| {
        let y = g.apply(x);
        prop_assert!(g.apply(x + dx) > y);
        let back = g.invert(y, 1e-12).unwrap();
        prop_assert!((back - x).abs() <= 1e-9 * (1.0 + x.abs()), "{x} -> {y} -> {back}");
        Ok(())
    })
}

/// TTN and the exact oracle coincide when both marginals are Gaussian.
pub fn ttn_matches_oracle_on_gaussians() -> Result<(), String> {
    let s = (-5.0..5.0f64, 0.1..5.0f64, -5.0..5.0f64, 0.1..5.0f64, -4.0..4.0f64);
    run(s, |(mu_s, sd_s, mu_t, sd_t, zs)| {
        let z = mu_t + zs * sd_t;
        let oracle = oracle_aqr_two_sided(
            z,
            |u| mu_s + sd_s * probit(u).unwrap(),
            |u| mu_s - sd_s * probit(u).unwrap(),
            |z| normal_cdf((z - mu_t) / sd_t),
            |z| normal_cdf(-(z - mu_t) / sd_t),
        );
        let ttn = ttn_transform(z, mu_s, sd_s, mu_t, sd_t).unwrap();
        prop_assert!((oracle - ttn).abs() <= 1e-9, "{oracle} vs {ttn}");
        Ok(())
    })
}

fn batch(rows: usize, values: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn((rows, 3), |(i, j)| values[(i * 3 + j) % values.len()])
}

/// Adapting a batch gives the same result whatever was adapted before it.
pub fn statelessness() -> Result<(), String> {
    let net: Network<f64> = build_mlp(3, &[5, 4], Activation::leaky_relu(0.1).unwrap(), 3).unwrap();
    let src = sample_source(&SourceSpec::iid(Marginal::StandardNormal, 3, 1).unwrap(), 2_000).unwrap();
    let cfg = AdaptationConfig {
        k: 20,
        tail_repeats: 50,
        ..AdaptationConfig::default()
    };
    let stats = setup_phase(&net, &[src.view()], &cfg).unwrap();
    let s = (
        2usize..64,
        prop::collection::vec(-4.0..4.0f64, 6..200),
        2usize..64,
        prop::collection::vec(-4.0..4.0f64, 6..200),
    );
    run(s, |(ra, va, rb, vb)| {
        let (a, b) = (batch(ra, &va), batch(rb, &vb));
        let fresh = adapt_batch(&net, &stats, b.view()).unwrap();
        adapt_batch(&net, &stats, a.view()).unwrap();
        let after = adapt_batch(&net, &stats, b.view()).unwrap();
        prop_assert_eq!(fresh.0, after.0);
        prop_assert_eq!(fresh.1, after.1);
        Ok(())
    })
}

fn strategy() -> impl Strategy<Value = TailStrategy> {
    prop::sample::select(TailStrategy::ALL.to_vec())
}

/// Statistics survive a JSON round trip bit for bit.
pub fn serialization_round_trip() -> Result<(), String> {
    let s = (1usize..12, strategy(), 0u64..1_000, 20usize..80, 1usize..20, any::<u64>());
    run(s, |(k, strat, net_seed, n, repeats, data_seed)| {
        let net: Network<f64> = build_one_hidden_mlp(2, 3, Activation::Tanh, net_seed).unwrap();
        let data = sample_source(&SourceSpec::iid(Marginal::StandardNormal, 2, data_seed).unwrap(), n).unwrap();
        let cfg = AdaptationConfig {
            k,
            tail_strategy: strat,
            tail_batch: 10,
            tail_repeats: repeats,
            rng_seed: data_seed,
            ..AdaptationConfig::default()
        };
        let stats = setup_phase(&net, &[data.view()], &cfg).unwrap();
        let back = statistics_from_json::<f64>(&statistics_to_json(&stats).unwrap()).unwrap();
        for (h, g) in stats.hooks.iter().zip(&back.hooks) {
            for (c, d) in h.channels.iter().zip(&g.channels) {
                let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                prop_assert_eq!(bits(c.profile.knots()), bits(d.profile.knots()));
                prop_assert_eq!(c.mean.to_bits(), d.mean.to_bits());
                prop_assert_eq!(c.std.to_bits(), d.std.to_bits());
            }
        }
        prop_assert_eq!(stats, back);
        Ok(())
    })
}

/// Seeded sampling, setup, tail calibration and CSV emission repeat exactly,
/// and CSV floats parse back to the same bits.
pub fn determinism() -> Result<(), String> {
    let s = (any::<u64>(), 10usize..200, prop::collection::vec(any::<f64>(), 1..20));
    run(s, |(seed, n, floats)| {
        let spec = SourceSpec::iid(
            Marginal::GaussianMixture {
                weights: vec![0.3, 0.7],
                means: vec![-1.0, 2.0],
                stds: vec![0.5, 1.0],
            },
            2,
            seed,
        )
        .unwrap();
        let a: Array2<f64> = sample_source(&spec, n).unwrap();
        prop_assert_eq!(&a, &sample_source::<f64>(&spec, n).unwrap());

        let col = a.column(0).to_vec();
        let t1 = calibrate_average_sample_tails(&col, 5, 20, seed).unwrap();
        prop_assert_eq!(t1, calibrate_average_sample_tails(&col, 5, 20, seed).unwrap());

        let net: Network<f64> = build_one_hidden_mlp(2, 3, Activation::Tanh, seed).unwrap();
        let cfg = AdaptationConfig {
            k: 5,
            tail_batch: 10,
            tail_repeats: 5,
            rng_seed: seed,
            ..AdaptationConfig::default()
        };
        let s1 = setup_phase(&net, &[a.view()], &cfg).unwrap();
        prop_assert_eq!(s1, setup_phase(&net, &[a.view()], &cfg).unwrap());

        let mut report = CsvReport::new(&["i", "x"]);
        for (i, &x) in floats.iter().enumerate() {
            report.push(vec![Cell::from(i), Cell::from(x)]);
        }
        let (bytes, _) = report.to_bytes().unwrap();
        prop_assert_eq!(&bytes, &report.to_bytes().unwrap().0);
        let text = String::from_utf8(bytes).unwrap();
        for (line, &x) in text.lines().skip(1).zip(&floats) {
            let cell = line.split(',').nth(1).unwrap();
            if x.is_finite() {
                prop_assert_eq!(cell.parse::<f64>().unwrap().to_bits(), x.to_bits());
            } else {
                prop_assert_eq!(cell, "");
            }
        }
        Ok(())
    })
}

type Suite = fn() -> Result<(), String>;

pub const SUITES: [(&str, Suite); 10] = [
    ("monotonicity", monotonicity),
    ("knot mapping", knot_mapping),
    ("round trip", round_trip),
    ("profile idempotence", profile_idempotence),
    ("corruption round trip", corruption_round_trip),
    ("TTN equals oracle on Gaussians", ttn_matches_oracle_on_gaussians),
    ("statelessness", statelessness),
    ("serialization round trip", serialization_round_trip),
    ("determinism", determinism),
    ("knot mapping (f32)", knot_mapping_f32),
];

/// The f32 instantiation honours knot mapping too.
pub fn knot_mapping_f32() -> Result<(), String> {
    let s = (2usize..40).prop_flat_map(|k| (strict_knots(k), knots(k)));
    run(s, |(t, src)| {
        let t: Vec<f32> = t.iter().map(|&v| v as f32).collect();
        let src: Vec<f32> = src.iter().map(|&v| v as f32).collect();
        if t.windows(2).any(|w| w[0] >= w[1]) {
            return Ok(());
        }
        let tp = QuantileProfile::from_knots(t.clone(), 100).unwrap();
        let sp = QuantileProfile::from_knots(src.clone(), 100).unwrap();
        let map = QuantileMap::new(&tp, &sp, TailRule::Standard).unwrap();
        for j in 1..t.len() - 1 {
            let y = map.apply(t[j]);
            prop_assert!((y - src[j]).abs() <= 1e-5 * (1.0 + src[j].abs()), "j = {j}: {y} vs {}", src[j]);
        }
        Ok(())
    })
}
