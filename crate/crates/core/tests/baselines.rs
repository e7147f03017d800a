//! RevIN, SAN and FAN wrappers.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specshift::baselines::{fan_main_freq_part, revin_denormalize, revin_normalize, san_denormalize, san_normalize, san_stage1_train, top_k_bins};
use specshift::baselines::san::patch_stats;
use specshift::data::{RawSeries, Splits, WindowedDataset};
use specshift::models::BackboneKind;
use specshift::spectral::{amplitude, dft_forward};
use specshift::training::{train, Method, TrainConfig};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn revin_round_trip(x in prop::collection::vec(-1e3f64..1e3, 4..60).prop_filter("even", |v| v.len() % 2 == 0)) {
        let (z, stats) = revin_normalize(&x, 2).unwrap();
        let back = revin_denormalize(&z, &stats, &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn fan_split_is_exact(x in prop::collection::vec(-50.0f64..50.0, 2..120), frac in 0.0f64..1.0) {
        let bins = x.len() / 2 + 1;
        let k = 1 + ((bins - 1) as f64 * frac) as usize;
        let (res, filt) = fan_main_freq_part(&x, k).unwrap();
        for j in 0..x.len() {
            prop_assert!((res[j] + filt[j] - x[j]).abs() <= 1e-10);
        }
    }

    #[test]
    fn top_k_dominates_the_rest(a in prop::collection::vec(prop::sample::select(vec![0.0, 0.5, 1.0, 2.0, 3.5]), 1..30), frac in 0.0f64..1.0) {
        let k = 1 + ((a.len() - 1) as f64 * frac) as usize;
        let sel = top_k_bins(&a, k);
        prop_assert_eq!(sel.len(), k);
        let min_sel = sel.iter().map(|&j| a[j]).fold(f64::INFINITY, f64::min);
        for j in (0..a.len()).filter(|j| !sel.contains(j)) {
            prop_assert!(a[j] <= min_sel);
            // A skipped bin equal to a selected one must come after it.
            if a[j] == min_sel {
                prop_assert!(sel.iter().any(|&s| a[s] == min_sel && s < j));
            }
        }
    }
}

#[test]
fn full_retention_and_single_tone() {
    let n = 32;
    let x: Vec<f64> = (0..n).map(|t| (2.0 * std::f64::consts::PI * 3.0 * t as f64 / n as f64).sin()).collect();
    let (res, _) = fan_main_freq_part(&x, 1).unwrap();
    assert!(res.iter().all(|v| v.abs() <= 1e-8));
    let y: Vec<f64> = (0..n).map(|t| ((t * 13) % 7) as f64).collect();
    let (res, filt) = fan_main_freq_part(&y, n / 2 + 1).unwrap();
    assert!(res.iter().all(|v| v.abs() <= 1e-10));
    assert!(filt.iter().zip(&y).all(|(a, b)| (a - b).abs() <= 1e-10));
    assert!(fan_main_freq_part(&y, 0).is_err());
    assert!(fan_main_freq_part(&y, n / 2 + 2).is_err());
    let amps = amplitude(&dft_forward(&y).unwrap());
    assert_eq!(top_k_bins(&amps, 1), vec![0]);
}

/// Windows whose every 12-step patch has the same mean and variance as the
/// rest of the window.
fn identity_statistics_dataset(samples: usize, seed: u64) -> WindowedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (l, h) = (24, 12);
    let series: Vec<RawSeries> = (0..samples)
        .map(|_| {
            let (m, s, phi) = (rng.random_range(-2.0..2.0), rng.random_range(0.5..2.0), rng.random_range(0.0..6.3));
            let data = (0..l + h).map(|t| m + s * (2.0 * std::f64::consts::PI * t as f64 / 12.0 + phi).sin()).collect();
            RawSeries::new(vec!["x".into()], l + h, data).unwrap()
        })
        .collect();
    let n = samples;
    let splits = Splits { train: 0..n * 8 / 10, val: n * 8 / 10..n * 9 / 10, test: n * 9 / 10..n };
    WindowedDataset::from_samples(&series, l, h, splits).unwrap()
}

#[test]
fn san_learns_identity_statistics() {
    let ds = identity_statistics_dataset(400, 1);
    let state = san_stage1_train(&ds, 12, 150, 3).unwrap();
    let loss = *state.history.last().unwrap();
    assert!(loss < 1e-3 * state.history[0], "loss {loss} from {}", state.history[0]);
    let mut frozen = state.clone();
    frozen.freeze();
    let (mut err_m, mut err_v, mut ref_m, mut ref_v) = (0.0, 0.0, 0.0, 0.0);
    for i in ds.split_range(specshift::data::Split::Test) {
        let (mut mu, mut var) = (vec![0.0; 1], vec![0.0; 1]);
        patch_stats(ds.target(i, 0), 12, &mut mu, &mut var);
        let (_, stats) = san_normalize(ds.input(i, 0), &frozen).unwrap();
        err_m += (stats.mean[0] - mu[0]).powi(2);
        err_v += (stats.var[0] - var[0]).powi(2);
        ref_m += mu[0] * mu[0];
        ref_v += var[0] * var[0];
    }
    // Root-mean-square error relative to the root-mean-square statistic.
    let (rm, rv) = ((err_m / ref_m).sqrt(), (err_v / ref_v).sqrt());
    assert!(rm <= 0.05 && rv <= 0.05, "relative errors mean {rm}, var {rv}");
}

#[test]
fn san_requires_a_frozen_predictor_and_inverts() {
    let ds = identity_statistics_dataset(20, 2);
    let mut state = san_stage1_train(&ds, 12, 0, 3).unwrap();
    assert_eq!(state.history.len(), 1);
    assert!(san_normalize(ds.input(0, 0), &state).is_err());
    state.freeze();
    let (_, stats) = san_normalize(ds.input(0, 0), &state).unwrap();
    let y = san_denormalize(&[0.0; 12], &state, &stats).unwrap();
    assert!((y[0] - stats.mean[0]).abs() < 1e-12);
}

#[test]
fn stage_two_leaves_the_predictor_alone() {
    let ds = identity_statistics_dataset(60, 3);
    let cfg = |epochs| TrainConfig {
        method: Method::San,
        backbone: BackboneKind::Linear,
        max_epochs: epochs,
        patience: 50,
        san_epochs: 3,
        lr: 1e-2,
        ..TrainConfig::default()
    };
    let (short, _) = train(&cfg(1), &ds).unwrap();
    let (long, _) = train(&cfg(6), &ds).unwrap();
    let san_ids = |p: &specshift::training::Pipeline| -> Vec<_> {
        p.store.ids().filter(|&id| p.store.name(id).starts_with("san.")).collect()
    };
    let (a, b) = (san_ids(&short), san_ids(&long));
    assert!(!a.is_empty());
    assert_eq!(short.store.checksum(&a), long.store.checksum(&b));
    let bb = |p: &specshift::training::Pipeline| -> Vec<_> {
        p.store.ids().filter(|&id| p.store.name(id).starts_with("backbone.")).collect()
    };
    assert_ne!(short.store.checksum(&bb(&short)), long.store.checksum(&bb(&long)));
}
