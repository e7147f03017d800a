//! Transform properties against a direct O(L²) evaluation.

use proptest::prelude::*;
use specshift::spectral::{amplitude, apply_window, bin_count, dft_forward, dft_inverse, truncate_bins, Spectrum, WindowFn};

fn direct_dft(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let (mut re, mut im) = (vec![0.0; bin_count(n)], vec![0.0; bin_count(n)]);
    for k in 0..re.len() {
        for (t, v) in x.iter().enumerate() {
            // Reduce k·t mod n first so the angle stays small and exact.
            let a = -2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
            re[k] += v * a.cos();
            im[k] += v * a.sin();
        }
    }
    (re, im)
}

fn series(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, 2..=max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn round_trip(x in series(512)) {
        let back = dft_inverse(&dft_forward(&x).unwrap()).unwrap();
        let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn matches_direct_evaluation(x in series(200)) {
        let s = dft_forward(&x).unwrap();
        let (re, im) = direct_dft(&x);
        let scale = 1.0 + x.iter().map(|v| v.abs()).sum::<f64>();
        for k in 0..re.len() {
            prop_assert!((s.re[k] - re[k]).abs() <= 1e-9 * scale);
            prop_assert!((s.im[k] - im[k]).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn linearity(pair in (2usize..300).prop_flat_map(|n| (prop::collection::vec(-10.0f64..10.0, n), prop::collection::vec(-10.0f64..10.0, n))),
                 a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let (x, y) = pair;
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let (sx, sy, sm) = (dft_forward(&x).unwrap(), dft_forward(&y).unwrap(), dft_forward(&mix).unwrap());
        for k in 0..sm.re.len() {
            prop_assert!((sm.re[k] - (a * sx.re[k] + b * sy.re[k])).abs() <= 1e-10 * (1.0 + sm.re[k].abs()) * x.len() as f64);
            prop_assert!((sm.im[k] - (a * sx.im[k] + b * sy.im[k])).abs() <= 1e-10 * (1.0 + sm.im[k].abs()) * x.len() as f64);
        }
    }

    #[test]
    fn parseval(x in series(512)) {
        let s = dft_forward(&x).unwrap();
        let n = x.len();
        let energy: f64 = x.iter().map(|v| v * v).sum();
        let spec: f64 = (0..s.re.len())
            .map(|k| {
                let twice = k != 0 && !(n % 2 == 0 && k == n / 2);
                (if twice { 2.0 } else { 1.0 }) * (s.re[k].powi(2) + s.im[k].powi(2))
            })
            .sum::<f64>() / n as f64;
        prop_assert!((energy - spec).abs() <= 1e-8 * energy.max(1e-300));
    }

    #[test]
    fn hermitian_structure(x in series(300)) {
        let s = dft_forward(&x).unwrap();
        prop_assert_eq!(s.im[0], 0.0);
        if x.len() % 2 == 0 {
            prop_assert_eq!(s.im[s.im.len() - 1], 0.0);
        }
    }

    #[test]
    fn truncation_zeroes_only_upper_bins(x in series(100), frac in 0.0f64..1.0) {
        let s = dft_forward(&x).unwrap();
        let keep = 1 + ((s.bins() - 1) as f64 * frac) as usize;
        let t = truncate_bins(&s, keep).unwrap();
        for k in 0..s.bins() {
            if k < keep {
                prop_assert_eq!((t.re[k], t.im[k]), (s.re[k], s.im[k]));
            } else {
                prop_assert_eq!((t.re[k], t.im[k]), (0.0, 0.0));
            }
        }
    }

    #[test]
    fn amplitudes_are_moduli(x in series(100)) {
        let s = dft_forward(&x).unwrap();
        for (k, a) in amplitude(&s).iter().enumerate() {
            prop_assert!(*a >= 0.0);
            prop_assert!((a - s.re[k].hypot(s.im[k])).abs() <= 1e-12 * (1.0 + a));
        }
    }
}

#[test]
fn powers_of_two_and_awkward_lengths_agree_with_direct() {
    for n in [2, 3, 4, 5, 7, 8, 16, 17, 96, 97, 127, 128, 336, 509, 512] {
        let x: Vec<f64> = (0..n).map(|t| ((t * 7919) % 23) as f64 - 11.0 + (t as f64 * 0.37).sin()).collect();
        let s = dft_forward(&x).unwrap();
        let (re, im) = direct_dft(&x);
        for k in 0..re.len() {
            assert!((s.re[k] - re[k]).abs() < 1e-9 * n as f64, "n={n} k={k}");
            assert!((s.im[k] - im[k]).abs() < 1e-9 * n as f64, "n={n} k={k}");
        }
    }
}

#[test]
fn rectangular_window_and_hann_endpoints() {
    let x = [3.0, -1.0, 2.5, 4.0, 7.0];
    assert_eq!(apply_window(&x, WindowFn::Rectangular), x.to_vec());
    let h = apply_window(&x, WindowFn::Hann);
    assert_eq!((h[0], h[4]), (0.0, 0.0));
    assert!((h[2] - 2.5).abs() < 1e-15);
}

#[test]
fn inverse_rejects_inconsistent_bins() {
    assert!(Spectrum::new(vec![1.0; 2], vec![0.0; 2], 4).is_err());
    assert!(dft_forward(&[1.0, f64::INFINITY]).is_err());
}
