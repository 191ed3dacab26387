//! End-to-end checks through the public API: setup, persistence, adaptation
//! under corruption, and the population-level maps on the one-hidden-layer
//! testbed.

use aqr::adaptation::{adapt_batch_shifted, oracle_aqr_two_sided, Adapter, AdaptationConfig};
use aqr::corruption::{sample_source, CorruptionSpec, Marginal, PreActivationShift, SourceSpec};
use aqr::net::{build_mlp, build_one_hidden_mlp, Activation, LayerPolicy, Network};
use aqr::special::{normal_cdf, normal_pdf, probit};
use aqr::tails::TailStrategy;
use aqr::theory::mse_against_reference;
use aqr::{load_statistics, save_statistics, setup_phase, SourceStatisticsF64};
use ndarray::Array2;

const FLOOR: f64 = 0.56;

fn testbed() -> (Network<f64>, Activation) {
    let act = Activation::leaky_relu(0.1).unwrap();
    (build_one_hidden_mlp(3, 8, act, 7).unwrap(), act)
}

fn normal(n: usize, seed: u64) -> Array2<f64> {
    sample_source(&SourceSpec::iid(Marginal::StandardNormal, 3, seed).unwrap(), n).unwrap()
}

fn cubic_shift(m: usize) -> PreActivationShift<f64> {
    PreActivationShift::none()
        .with_hook("hidden0".into(), vec![CorruptionSpec::cubic(1.0, 1.0).unwrap(); m])
        .unwrap()
}

/// Composite Simpson rule on `[a, b]` with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn ttn_floor_constant_is_below_population_residual() {
    // Each pre-activation is N(b_i, |W_i|²) for standard-normal inputs; the
    // population TTN residual is integrated channel by channel.
    let (net, act) = testbed();
    let layer = &net.layers()[0];
    let g = |a: f64| a + a * a * a;
    let mut total = 0.0;
    for i in 0..8 {
        let b = layer.bias[i];
        let s = layer.weights.row(i).iter().map(|w| w * w).sum::<f64>().sqrt();
        let dens = |a: f64| normal_pdf((a - b) / s) / s;
        let (lo, hi) = (b - 12.0 * s, b + 12.0 * s);
        let mu = simpson(|a| g(a) * dens(a), lo, hi, 200_000);
        let sd = simpson(|a| (g(a) - mu).powi(2) * dens(a), lo, hi, 200_000).sqrt();
        total += simpson(
            |a| (act.apply(b + s * (g(a) - mu) / sd) - act.apply(a)).powi(2) * dens(a),
            lo,
            hi,
            200_000,
        );
    }
    assert!((total - 0.626_41).abs() < 1e-4, "{total}");
    assert!(FLOOR <= 0.9 * total);
}

#[test]
fn oracle_recovers_clean_activations() {
    let (net, act) = testbed();
    let layer = &net.layers()[0];
    let x = normal(20_000, 3);
    let clean = net.forward_plain(x.view()).unwrap().captures.remove(0).pre_activations;
    let g = CorruptionSpec::cubic(1.0, 1.0).unwrap();
    let mut recovered = clean.clone();
    for c in 0..8 {
        let b = layer.bias[c];
        let s = layer.weights.row(c).iter().map(|w| w * w).sum::<f64>().sqrt();
        for v in recovered.column_mut(c) {
            let z = g.apply(*v);
            let pre = |z: f64| (g.invert(z, 1e-13).unwrap() - b) / s;
            *v = oracle_aqr_two_sided(
                z,
                |u| b + s * probit(u).unwrap(),
                |p| b - s * probit(p).unwrap(),
                |z| normal_cdf(pre(z)),
                |z| normal_cdf(-pre(z)),
            );
        }
    }
    let r = mse_against_reference(recovered.mapv(|v| act.apply(v)).view(), clean.mapv(|v| act.apply(v)).view()).unwrap();
    assert!(r.total <= 1e-12, "{}", r.total);
}

#[test]
fn aqr_beats_ttn_under_cubic_corruption() {
    let (net, act) = testbed();
    let cfg = AdaptationConfig {
        tail_strategy: TailStrategy::Standard,
        ..AdaptationConfig::default()
    };
    let stats = setup_phase(&net, &[normal(20_000, 4).view()], &cfg).unwrap();
    let batch = normal(20_000, 5);
    let clean = net.forward_plain(batch.view()).unwrap().captures.remove(0).pre_activations.mapv(|v| act.apply(v));
    let mse = |adapter| {
        let (_, d) = adapt_batch_shifted(&net, &stats, batch.view(), &cubic_shift(8), adapter).unwrap();
        mse_against_reference(d.hooks[0].adapted.mapv(|v| act.apply(v)).view(), clean.view())
            .unwrap()
            .total
    };
    let (aqr, ttn) = (mse(Adapter::Aqr(TailStrategy::Standard)), mse(Adapter::Ttn));
    assert!(ttn >= FLOOR, "{ttn}");
    assert!(aqr <= 0.1 * FLOOR, "{aqr}");
}

#[test]
fn saved_statistics_adapt_identically() {
    let (net, _) = testbed();
    let cfg = AdaptationConfig {
        tail_repeats: 100,
        ..AdaptationConfig::default()
    };
    let stats = setup_phase(&net, &[normal(3_000, 6).view()], &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stats.json");
    save_statistics(&stats, &path).unwrap();
    let loaded: SourceStatisticsF64 = load_statistics(&path).unwrap();
    let batch = normal(256, 7);
    let run = |s| adapt_batch_shifted(&net, s, batch.view(), &cubic_shift(8), Adapter::Aqr(cfg.tail_strategy)).unwrap().0;
    assert_eq!(run(&stats), run(&loaded));
}

#[test]
fn top_half_policy_leaves_shallow_layers_alone() {
    let act = Activation::Tanh;
    let net: Network<f64> = build_mlp(3, &[5, 5, 5, 5], act, 9).unwrap();
    let cfg = AdaptationConfig {
        layer_policy: LayerPolicy::TopHalf,
        tail_repeats: 50,
        ..AdaptationConfig::default()
    };
    let stats = setup_phase(&net, &[normal(2_000, 8).view()], &cfg).unwrap();
    let batch = normal(200, 10);
    let (_, diag) = adapt_batch_shifted(&net, &stats, batch.view(), &PreActivationShift::none(), Adapter::Aqr(TailStrategy::Standard)).unwrap();
    let adapted: Vec<bool> = diag.hooks.iter().map(|h| h.adapted_here).collect();
    assert_eq!(adapted, vec![false, false, true, true]);
    assert!(diag.hooks[0].target_profiles.is_empty());
}

#[test]
fn f32_and_f64_pipelines_agree() {
    let act = Activation::leaky_relu(0.1).unwrap();
    let n64: Network<f64> = build_one_hidden_mlp(3, 4, act, 3).unwrap();
    let n32: Network<f32> = build_one_hidden_mlp(3, 4, act, 3).unwrap();
    let cfg = AdaptationConfig {
        k: 20,
        tail_strategy: TailStrategy::Standard,
        ..AdaptationConfig::default()
    };
    let src = normal(2_000, 11);
    let s64 = setup_phase(&n64, &[src.view()], &cfg).unwrap();
    let s32 = setup_phase(&n32, &[src.mapv(|v| v as f32).view()], &cfg).unwrap();
    let batch = normal(300, 12);
    let shift64 = PreActivationShift::none()
        .with_hook("hidden0".into(), vec![CorruptionSpec::tanh_warp(1.0, 0.5).unwrap(); 4])
        .unwrap();
    let shift32 = PreActivationShift::none()
        .with_hook("hidden0".into(), vec![CorruptionSpec::tanh_warp(1.0f32, 0.5).unwrap(); 4])
        .unwrap();
    let (o64, _) = adapt_batch_shifted(&n64, &s64, batch.view(), &shift64, Adapter::Aqr(TailStrategy::Standard)).unwrap();
    let (o32, _) = adapt_batch_shifted(&n32, &s32, batch.mapv(|v| v as f32).view(), &shift32, Adapter::Aqr(TailStrategy::Standard)).unwrap();
    let worst = o64
        .iter()
        .zip(o32.iter())
        .map(|(a, b)| (a - *b as f64).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-3, "{worst}");
}
