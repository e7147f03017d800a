//! Commands called as library functions on small synthetic and CSV inputs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use specshift::config::{DataSource, RunConfig};
use specshift::training::Method;
use specshift_cli::{cmd_ablate, cmd_eval, cmd_shift, cmd_stats, cmd_train};

fn small(out: &Path, method: Method) -> RunConfig {
    let mut cfg = RunConfig { lookback: 24, horizon: 12, out: out.to_path_buf(), ..RunConfig::default() };
    for (k, v) in [("backbone", "linear"), ("lr", "0.01"), ("max_epochs", "4"), ("hidden", "8"), ("seed", "2")] {
        cfg.set(k, v).unwrap();
    }
    cfg.train.method = method;
    cfg
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn eval_sweeps_alphas_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path(), Method::Tifo);
    cmd_train(&cfg).unwrap();
    cfg.set("alphas", "1, 0.75, 0.5, 0.25, 0").unwrap();
    cmd_eval(&cfg).unwrap();
    let m = read_json(&dir.path().join("metrics.json"));
    let records = m["records"].as_array().unwrap();
    let alphas: Vec<f64> = records.iter().map(|r| r["alpha"].as_f64().unwrap()).collect();
    assert_eq!(alphas, vec![1.0, 0.75, 0.5, 0.25, 0.0]);
    assert!(records.iter().all(|r| r["ema_decay"].is_null() && r["mse"].as_f64().unwrap() > 0.0));
    assert_eq!(records[4]["mse"], m["without_operator"]["mse"]);
    assert_eq!(m["method"], "tifo");
}

#[test]
fn eval_crosses_alphas_with_ema_settings() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path(), Method::Tifo);
    cmd_train(&cfg).unwrap();
    cfg.set("alphas", "1,0").unwrap();
    cfg.set("ema_decays", "none,0.9").unwrap();
    cmd_eval(&cfg).unwrap();
    let m = read_json(&dir.path().join("metrics.json"));
    let keys: Vec<(f64, Option<f64>)> = m["records"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| (r["alpha"].as_f64().unwrap(), r["ema_decay"].as_f64()))
        .collect();
    assert_eq!(keys, vec![(1.0, None), (1.0, Some(0.9)), (0.0, None), (0.0, Some(0.9))]);
}

#[test]
fn single_cell_ablation_matches_train_then_eval() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut cfg = small(a.path(), Method::Tifo);
    cfg.set("alphas", "1,0.5").unwrap();
    cmd_train(&cfg).unwrap();
    cmd_eval(&cfg).unwrap();
    let m = read_json(&a.path().join("metrics.json"));
    cfg.out = b.path().to_path_buf();
    cmd_ablate(&cfg).unwrap();
    let csv = std::fs::read_to_string(b.path().join("ablation.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    for (row, rec) in rows.iter().zip(m["records"].as_array().unwrap()) {
        assert_eq!(&row[..3], &["rect", "full", "mu_sigma"]);
        assert_eq!(row[5], "1");
        assert_eq!(row[6].parse::<f64>().unwrap(), rec["mse"].as_f64().unwrap());
        assert_eq!(row[7], "0");
        assert_eq!(row[8].parse::<f64>().unwrap(), rec["mae"].as_f64().unwrap());
    }
}

#[test]
fn ablation_grid_covers_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path(), Method::Tifo);
    cfg.set("max_epochs", "1").unwrap();
    cfg.set("ablate_windows", "rect,hann").unwrap();
    cfg.set("ablate_keep", "full,5").unwrap();
    cfg.set("ablate_metrics", "mu_sigma,entropy").unwrap();
    cfg.set("repeats", "2").unwrap();
    cmd_ablate(&cfg).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8);
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(5) == Some("2")));
    assert!(dir.path().join("cell007").join("config.txt").exists());
}

#[test]
fn stats_finds_a_pure_tone() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("tone.csv");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut text = String::from("date,tone\n");
    for t in 0..400 {
        let v = (2.0 * std::f64::consts::PI * 5.0 * t as f64 / 32.0).sin() + rng.random_range(-0.05..0.05);
        text.push_str(&format!("t{t},{v}\n"));
    }
    std::fs::write(&csv, text).unwrap();
    let mut cfg = small(&dir.path().join("out"), Method::Tifo);
    cfg.data = DataSource::Csv(csv);
    cfg.lookback = 32;
    cfg.horizon = 8;
    cmd_stats(&cfg).unwrap();
    let stats = std::fs::read_to_string(dir.path().join("out/stats.csv")).unwrap();
    let best = stats
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .max_by(|a, b| a[4].total_cmp(&b[4]))
        .unwrap();
    assert_eq!(best[1], 5.0);
    assert_eq!(stats.lines().count(), 1 + 17);
}

#[test]
fn stats_are_reused_only_when_compatible() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path(), Method::Tifo);
    cmd_stats(&cfg).unwrap();
    let out = cmd_train(&cfg).unwrap();
    assert!(out.log.iter().any(|l| l.contains("scores.ckpt")), "{:?}", out.log);
    cfg.set("metric", "entropy").unwrap();
    let out = cmd_train(&cfg).unwrap();
    assert!(out.log.iter().any(|l| l.contains("fit")), "{:?}", out.log);
}

#[test]
fn shift_without_checkpoint_reports_before_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), Method::Tifo);
    cmd_shift(&cfg).unwrap();
    let s = read_json(&dir.path().join("shift.json"));
    assert!(s["after"].is_null());
    assert_eq!(s["bins"], 13);
    assert!(s["before"]["mean_ks"].as_f64().unwrap() > 0.0);
}
