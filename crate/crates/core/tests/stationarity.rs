//! Score oracles and invariants.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specshift::stationarity::{correlation_scores, ema_refresh, entropy_scores, stability_scores, AmplitudePanel};

fn random_panel(seed: u64, n: usize, k: usize, c: usize) -> AmplitudePanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AmplitudePanel::new(n, k, c, (0..n * k * c).map(|_| rng.random_range(0.0..5.0)).collect()).unwrap()
}

#[test]
fn mu_sigma_matches_naive_loops() {
    let p = random_panel(1, 20, 9, 3);
    let s = stability_scores(&p, 1e-5).unwrap();
    for c in 0..3 {
        for k in 0..9 {
            let mut mean = 0.0;
            for i in 0..20 {
                mean += p.get(i, k, c);
            }
            mean /= 20.0;
            let mut var = 0.0;
            for i in 0..20 {
                let d = p.get(i, k, c) - mean;
                var += d * d;
            }
            let naive = mean / ((var / 20.0).sqrt() + 1e-5);
            assert!((naive - s.get(k, c)).abs() <= 1e-12, "k={k} c={c}");
        }
    }
    assert_eq!(s.samples, 20);
}

#[test]
fn correlation_matches_naive_pearson() {
    let p = random_panel(2, 15, 5, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let targets: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
    let s = correlation_scores(&p, &targets).unwrap();
    for c in 0..2 {
        let t: Vec<f64> = (0..15).map(|i| targets[i * 2 + c]).collect();
        let mt = t.iter().sum::<f64>() / 15.0;
        for k in 0..5 {
            let a: Vec<f64> = (0..15).map(|i| p.get(i, k, c)).collect();
            let ma = a.iter().sum::<f64>() / 15.0;
            let cov: f64 = a.iter().zip(&t).map(|(x, y)| (x - ma) * (y - mt)).sum();
            let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
            let vt: f64 = t.iter().map(|y| (y - mt).powi(2)).sum();
            let r = (cov / (va * vt).sqrt()).abs();
            assert!((r - s.get(k, c)).abs() <= 1e-12);
        }
    }
}

#[test]
fn entropy_prefers_concentrated_bins() {
    // Every window puts 90% of its mass in bin 1.
    let mut data = Vec::new();
    for i in 0..6 {
        let spread = 0.1 / 3.0 * (1.0 + 0.01 * i as f64);
        data.extend_from_slice(&[spread, 0.9, spread, spread]);
    }
    let s = entropy_scores(&AmplitudePanel::new(6, 4, 1, data).unwrap()).unwrap();
    for k in [0, 2, 3] {
        assert!(s.get(1, 0) > s.get(k, 0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scale_covariance(seed in 0u64..1000, c in 0.1f64..10.0) {
        let p = random_panel(seed, 8, 4, 2);
        let scaled = AmplitudePanel::new(8, 4, 2, p.as_slice().iter().map(|v| v * c).collect()).unwrap();
        let (a, b) = (stability_scores(&p, 1e-12).unwrap(), stability_scores(&scaled, 1e-12).unwrap());
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn more_dispersion_lowers_the_score(spread in 0.1f64..3.0, extra in 0.01f64..2.0) {
        let panel = |d: f64| AmplitudePanel::new(2, 1, 1, vec![5.0 - d, 5.0 + d]).unwrap();
        let lo = stability_scores(&panel(spread.min(4.9)), 1e-5).unwrap().get(0, 0);
        let hi = stability_scores(&panel((spread + extra).min(4.99)), 1e-5).unwrap().get(0, 0);
        prop_assume!(spread + extra < 4.9);
        prop_assert!(hi < lo);
    }

    #[test]
    fn double_refresh_composes(seed in 0u64..1000, d in 0.05f64..0.95) {
        let s = stability_scores(&random_panel(seed, 6, 3, 2), 1e-5).unwrap();
        let batch = random_panel(seed + 1, 4, 3, 2);
        let twice = ema_refresh(&ema_refresh(&s, &batch, d).unwrap(), &batch, d).unwrap();
        let fresh = stability_scores(&batch, 1e-5).unwrap();
        for j in 0..s.values().len() {
            let want = d * d * s.values()[j] + (1.0 - d * d) * fresh.values()[j];
            prop_assert!((twice.values()[j] - want).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn scores_are_finite_and_non_negative(seed in 0u64..1000) {
        let p = random_panel(seed, 5, 6, 2);
        for s in [stability_scores(&p, 1e-5).unwrap(), entropy_scores(&p).unwrap()] {
            prop_assert!(s.values().iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }
}
