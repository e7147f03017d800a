//! End-to-end gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specshift::data::{chronological_split, make_windows, zscore_fit_apply, RawSeries, WindowedDataset};
use specshift::models::{backbone_vjp, BackboneKind, BackboneModel, BackboneSpec};
use specshift::training::{finite_diff_check, Method, Pipeline, TifoNorm, TrainConfig};

fn small_dataset(seed: u64) -> WindowedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = 60;
    let data: Vec<f64> = (0..2 * rows)
        .map(|i| {
            let t = (i % rows) as f64;
            (0.7 * t).sin() + 0.4 * (2.3 * t + i as f64).cos() + rng.random_range(-0.3..0.3)
        })
        .collect();
    let raw = RawSeries::new(vec!["a".into(), "b".into()], rows, data).unwrap();
    zscore_fit_apply(chronological_split(make_windows(&raw, 8, 4).unwrap()).unwrap()).unwrap()
}

fn config(method: Method, backbone: BackboneKind) -> TrainConfig {
    TrainConfig {
        method,
        backbone,
        seed: 11,
        hidden: 4,
        kernel: 3,
        san_patch: 4,
        fan_topk: 2,
        ..TrainConfig::default()
    }
}

/// Nudge the fresh parameters so no gradient vanishes by symmetry.
fn perturbed(mut p: Pipeline, seed: u64) -> Pipeline {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = p.store.ids().collect();
    for id in ids {
        if p.store.is_trainable(id) {
            p.store.get_mut(id).iter_mut().for_each(|v| *v += rng.random_range(-0.2..0.2));
        }
    }
    p
}

#[test]
fn every_method_and_backbone_matches_finite_differences() {
    let ds = small_dataset(3);
    let idx = [0, 5, 9];
    for method in Method::ALL {
        for backbone in [BackboneKind::Linear, BackboneKind::DLinear] {
            let p = perturbed(Pipeline::new(config(method, backbone), &ds).unwrap(), 5);
            let err = finite_diff_check(&p, &ds, &idx, 1e-5).unwrap();
            assert!(err <= 1e-5, "{method}/{backbone}: {err}");
        }
    }
}

#[test]
fn tifo_without_instance_norm_matches_finite_differences() {
    let ds = small_dataset(4);
    let cfg = TrainConfig { tifo_norm: TifoNorm::Off, ..config(Method::Tifo, BackboneKind::Linear) };
    let p = perturbed(Pipeline::new(cfg, &ds).unwrap(), 6);
    assert!(finite_diff_check(&p, &ds, &[1, 2], 1e-5).unwrap() <= 1e-5);
}

#[test]
fn bare_linear_gradient_is_tight() {
    let ds = small_dataset(5);
    let p = Pipeline::new(config(Method::None, BackboneKind::Linear), &ds).unwrap();
    assert!(finite_diff_check(&p, &ds, &[0, 1, 2, 3], 1e-5).unwrap() <= 1e-7);
}

#[test]
fn smaller_steps_do_not_worsen_the_check() {
    let ds = small_dataset(6);
    let p = perturbed(Pipeline::new(config(Method::Tifo, BackboneKind::DLinear), &ds).unwrap(), 7);
    let errs: Vec<f64> = [1e-2, 1e-3, 1e-4, 1e-5]
        .iter()
        .map(|&h| finite_diff_check(&p, &ds, &[0, 3], h).unwrap())
        .collect();
    for w in errs.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "{errs:?}");
    }
    // The coarse step must show truncation error, or the check is vacuous.
    assert!(errs[0] > 1e-6 && errs[3] < errs[0], "{errs:?}");
}

#[test]
fn backbone_input_gradient_matches_finite_differences() {
    for kind in [BackboneKind::Linear, BackboneKind::DLinear] {
        let spec = BackboneSpec { kind, lookback: 8, horizon: 4, channels: 2, individual: true, kernel: 3 };
        let m = BackboneModel::new(spec, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let up: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (grads, gx) = backbone_vjp(&m, &x, &up).unwrap();
        let f = |m: &BackboneModel, x: &[f64]| -> f64 {
            specshift::models::backbone_forward(m, x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        for i in 0..x.len() {
            let (mut a, mut b) = (x.clone(), x.clone());
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (f(&m, &a) - f(&m, &b)) / 2e-6;
            assert!((fd - gx[i]).abs() <= 1e-6 * fd.abs().max(1.0), "{kind} x[{i}]");
        }
        for id in m.backbone.param_ids() {
            for j in 0..m.store.get(id).len() {
                let mut mp = m.clone();
                mp.store.get_mut(id)[j] += 1e-6;
                let mut mm = m.clone();
                mm.store.get_mut(id)[j] -= 1e-6;
                let fd = (f(&mp, &x) - f(&mm, &x)) / 2e-6;
                let g = grads.get(id)[j];
                assert!((fd - g).abs() <= 1e-6 * fd.abs().max(1.0), "{kind} param {j}");
            }
        }
    }
}
