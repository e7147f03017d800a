//! Frequency operator: identity, linearity, adjoint and weight sharing.

use proptest::prelude::*;
use specshift::stationarity::{ScoreMetric, StabilityScores};
use specshift::tifo::{alpha_scale, init_tifo, transform, transform_vjp, weights, FrequencyWeights};

fn random_weights(k: usize, c: usize, seed: u64) -> FrequencyWeights {
    let v = |s: u64| (0..k * c).map(|j| 0.5 + ((j as u64 * 2654435761 + s) % 1000) as f64 / 700.0).collect();
    FrequencyWeights { bins: k, channels: c, re: v(seed), im: v(seed + 7) }
}

fn window(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ones_are_the_identity(x in (2usize..=512).prop_flat_map(window)) {
        let w = FrequencyWeights::ones(x.len() / 2 + 1, 1);
        for (a, b) in transform(&x, &w).unwrap().iter().zip(&x) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn alpha_zero_is_the_identity(x in (2usize..=128).prop_flat_map(window), seed in 0u64..100) {
        let w = alpha_scale(&random_weights(x.len() / 2 + 1, 1, seed), 0.0).unwrap();
        for (a, b) in transform(&x, &w).unwrap().iter().zip(&x) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn linear_in_the_input(pair in (2usize..=96).prop_flat_map(|n| (window(n), window(n))), a in -2.0f64..2.0, b in -2.0f64..2.0, seed in 0u64..100) {
        let (x, y) = pair;
        let w = random_weights(x.len() / 2 + 1, 1, seed);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let (tx, ty, tm) = (transform(&x, &w).unwrap(), transform(&y, &w).unwrap(), transform(&mix, &w).unwrap());
        for j in 0..x.len() {
            prop_assert!((tm[j] - (a * tx[j] + b * ty[j])).abs() <= 1e-10);
        }
    }

    #[test]
    fn vjp_matches_finite_differences(x in window(8), u in window(8), seed in 0u64..100) {
        let w = random_weights(5, 1, seed);
        let f = |x: &[f64], w: &FrequencyWeights| -> f64 {
            transform(x, w).unwrap().iter().zip(&u).map(|(a, b)| a * b).sum()
        };
        let (gx, glr, gli) = transform_vjp(&x, &w, &u).unwrap();
        let h = 1e-5;
        let close = |fd: f64, g: f64| (fd - g).abs() <= 1e-6 * fd.abs().max(g.abs()).max(1.0);
        for i in 0..8 {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[i] += h;
            b[i] -= h;
            prop_assert!(close((f(&a, &w) - f(&b, &w)) / (2.0 * h), gx[i]));
        }
        for k in 0..5 {
            for plane in 0..2 {
                let (mut a, mut b) = (w.clone(), w.clone());
                let (pa, pb) = if plane == 0 { (&mut a.re, &mut b.re) } else { (&mut a.im, &mut b.im) };
                pa[k] += h;
                pb[k] -= h;
                let g = if plane == 0 { glr[k] } else { gli[k] };
                prop_assert!(close((f(&x, &a) - f(&x, &b)) / (2.0 * h), g));
            }
        }
    }

    #[test]
    fn channel_permutation_permutes_weights(seed in 0u64..50) {
        let (k, c) = (6, 3);
        let p = init_tifo(k, c, 5, seed).unwrap();
        let vals: Vec<f64> = (0..k * c).map(|j| ((j * 37 + seed as usize) % 11) as f64 / 3.0).collect();
        let perm = [2usize, 0, 1];
        let permuted: Vec<f64> = perm.iter().flat_map(|&src| vals[src * k..(src + 1) * k].to_vec()).collect();
        let s = |v: Vec<f64>| StabilityScores::from_values(k, c, v, ScoreMetric::MuSigma, 1e-5, 10).unwrap();
        let (w, wp) = (weights(&p, &s(vals)).unwrap(), weights(&p, &s(permuted)).unwrap());
        for (dst, &src) in perm.iter().enumerate() {
            prop_assert_eq!(wp.channel(dst), w.channel(src));
        }
    }
}

#[test]
fn identity_gradient_passes_through() {
    let x = [0.3, -1.0, 2.0, 0.5, 4.0, -2.0];
    let u = [1.0, 2.0, -1.0, 0.5, 0.0, 3.0];
    let (gx, _, _) = transform_vjp(&x, &FrequencyWeights::ones(4, 1), &u).unwrap();
    for (a, b) in gx.iter().zip(&u) {
        assert!((a - b).abs() <= 1e-10);
    }
}

#[test]
fn fresh_networks_start_at_the_identity() {
    let p = init_tifo(9, 2, 16, 4).unwrap();
    let s = StabilityScores::from_values(9, 2, (0..18).map(|j| j as f64).collect(), ScoreMetric::MuSigma, 1e-5, 5).unwrap();
    let w = weights(&p, &s).unwrap();
    assert!(w.re.iter().chain(&w.im).all(|v| *v == 1.0));
    assert_ne!(init_tifo(9, 2, 16, 5).unwrap().store, p.store);
}
