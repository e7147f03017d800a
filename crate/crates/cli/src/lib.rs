//! Commands behind the `specshift` binary. Each writes its artifacts under
//! the configured output directory and returns what it wrote.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use specshift::checkpoint::{pipeline_checkpoint, pipeline_from_checkpoint, scores_checkpoint, scores_from_checkpoint, Checkpoint};
use specshift::config::{DataSource, RunConfig};
use specshift::data::{generate_synthetic, prepare_csv, synthetic_dataset, synthetic_to_series, write_csv, Split, SyntheticSpec, WindowedDataset};
use specshift::report::{fmt6, sig6};
use specshift::spectral::bin_count;
use specshift::shift::compare_shift;
use specshift::stationarity::{AmplitudePanel, StabilityScores};
use specshift::training::{evaluate, fit_scores, train_pipeline, History, Metrics, Pipeline};
use specshift::{Error, Result};

pub const CONFIG_FILE: &str = "config.txt";
pub const SCORES_FILE: &str = "scores.ckpt";
pub const MODEL_FILE: &str = "model.ckpt";

/// Files written by a command plus human-readable log lines.
#[derive(Debug, Default)]
pub struct Output {
    pub files: Vec<PathBuf>,
    pub log: Vec<String>,
}

impl Output {
    fn write(&mut self, path: PathBuf, bytes: impl AsRef<[u8]>) -> Result<()> {
        std::fs::write(&path, bytes).map_err(|e| Error::File { path: path.clone(), message: e.to_string() })?;
        self.files.push(path);
        Ok(())
    }
}

fn prepare_out(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::File { path: cfg.out.clone(), message: e.to_string() })?;
    out.write(cfg.out.join(CONFIG_FILE), cfg.to_text())
}

/// The windowed, split and standardized dataset a config points at.
pub fn load_dataset(cfg: &RunConfig) -> Result<WindowedDataset> {
    match &cfg.data {
        DataSource::Csv(path) => prepare_csv(path, cfg.lookback, cfg.horizon),
        DataSource::Synthetic => {
            let set = generate_synthetic(&SyntheticSpec::shift_benchmark(cfg.lookback, cfg.horizon, cfg.train.seed))?;
            synthetic_dataset(&set, cfg.synth_val_fraction)
        }
    }
}

/// Per-bin amplitude statistics and stability scores of the training split.
pub fn cmd_stats(cfg: &RunConfig) -> Result<Output> {
    let mut out = Output::default();
    prepare_out(cfg, &mut out)?;
    let ds = load_dataset(cfg)?;
    let t = &cfg.train;
    let scores = fit_scores(&ds, t.metric, t.window, t.score_epsilon)?;
    let panel = AmplitudePanel::from_dataset(&ds, ds.split_range(Split::Train), t.window);
    let mut csv = String::from("channel,freq,mean,std,score\n");
    for c in 0..panel.channels() {
        for k in 0..panel.bins() {
            let col = panel.column(k, c);
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            let _ = writeln!(csv, "{c},{k},{},{},{}", fmt6(mean), fmt6(std), fmt6(scores.get(k, c)));
        }
    }
    out.write(cfg.out.join("stats.csv"), csv)?;
    scores_checkpoint(cfg, &scores).save(&cfg.out.join(SCORES_FILE))?;
    out.files.push(cfg.out.join(SCORES_FILE));
    out.log.push(format!("{} scores over {} training windows", t.metric, scores.samples));
    Ok(out)
}

/// Saved scores from `scores =` or the output directory, if any.
fn saved_scores(cfg: &RunConfig) -> Result<Option<(PathBuf, String, StabilityScores)>> {
    let path = match &cfg.scores {
        Some(p) => p.clone(),
        None => {
            let p = cfg.out.join(SCORES_FILE);
            if !p.exists() {
                return Ok(None);
            }
            p
        }
    };
    let ck = Checkpoint::load(&path)?;
    let scores = scores_from_checkpoint(&ck)?;
    Ok(Some((path, ck.meta("window").unwrap_or("").to_string(), scores)))
}

pub fn history_csv(h: &History) -> String {
    let mut s = String::from("epoch,train_mse,val_mse,lr,skipped_steps\n");
    for e in &h.epochs {
        let _ = writeln!(s, "{},{},{},{},{}", e.epoch, fmt6(e.train_mse), fmt6(e.val_mse), fmt6(e.lr), e.skipped_steps);
    }
    s
}

/// Train a pipeline on `ds`, reusing saved scores when they fit.
pub fn train_on(cfg: &RunConfig, ds: &WindowedDataset, log: &mut Vec<String>) -> Result<(Pipeline, History)> {
    let t = cfg.train.clone();
    let scores = if t.method.uses_tifo() {
        match saved_scores(cfg)? {
            Some((path, window, s))
                if s.metric == t.metric
                    && window == t.window.to_string()
                    && s.bins() == bin_count(ds.lookback)
                    && s.channels() == ds.channels =>
            {
                log.push(format!("using scores from {}", path.display()));
                Some(s)
            }
            _ => {
                log.push("no matching saved scores; fitting them on the training split".into());
                Some(fit_scores(ds, t.metric, t.window, t.score_epsilon)?)
            }
        }
    } else {
        None
    };
    let mut p = Pipeline::with_scores(t, ds.lookback, ds.horizon, ds.channels, scores)?;
    let h = train_pipeline(&mut p, ds)?;
    Ok((p, h))
}

pub fn cmd_train(cfg: &RunConfig) -> Result<Output> {
    let mut out = Output::default();
    prepare_out(cfg, &mut out)?;
    let ds = load_dataset(cfg)?;
    let (p, h) = train_on(cfg, &ds, &mut out.log)?;
    out.write(cfg.out.join("history.csv"), history_csv(&h))?;
    if !h.san_losses.is_empty() {
        let mut s = String::from("epoch,loss\n");
        for (i, l) in h.san_losses.iter().enumerate() {
            let _ = writeln!(s, "{i},{}", fmt6(*l));
        }
        out.write(cfg.out.join("san_history.csv"), s)?;
    }
    pipeline_checkpoint(cfg, &p).save(&cfg.out.join(MODEL_FILE))?;
    out.files.push(cfg.out.join(MODEL_FILE));
    let best = &h.epochs[h.best_epoch];
    out.log.push(format!("best epoch {} of {}, val_mse {}", h.best_epoch, h.epochs.len() - 1, fmt6(best.val_mse)));
    Ok(out)
}

fn load_pipeline(path: &Path) -> Result<Pipeline> {
    Ok(pipeline_from_checkpoint(&Checkpoint::load(path)?)?.1)
}

fn check_compatible(p: &Pipeline, ds: &WindowedDataset) -> Result<()> {
    if (p.lookback, p.horizon, p.channels) != (ds.lookback, ds.horizon, ds.channels) {
        return Err(Error::Checkpoint(format!(
            "checkpoint is L={} H={} C={}, data is L={} H={} C={}",
            p.lookback, p.horizon, p.channels, ds.lookback, ds.horizon, ds.channels
        )));
    }
    Ok(())
}

fn metrics_json(m: Metrics) -> Value {
    json!({ "mse": sig6(m.mse), "mae": sig6(m.mae) })
}

/// Test metrics for every (alpha, ema decay) pair, alpha-major.
pub fn eval_records(p: &Pipeline, ds: &WindowedDataset, cfg: &RunConfig) -> Result<Vec<(f64, Option<f64>, Metrics)>> {
    let mut rows = Vec::new();
    for &a in &cfg.alphas {
        for &d in &cfg.ema_decays {
            rows.push((a, d, evaluate(p, ds, Split::Test, Some(a), d)?));
        }
    }
    Ok(rows)
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<Output> {
    let mut out = Output::default();
    prepare_out(cfg, &mut out)?;
    let path = cfg.checkpoint.clone().unwrap_or_else(|| cfg.out.join(MODEL_FILE));
    let p = load_pipeline(&path)?;
    let ds = load_dataset(cfg)?;
    check_compatible(&p, &ds)?;
    let records: Vec<Value> = eval_records(&p, &ds, cfg)?
        .into_iter()
        .map(|(a, d, m)| json!({ "alpha": a, "ema_decay": d, "mse": sig6(m.mse), "mae": sig6(m.mae) }))
        .collect();
    let mut v = json!({ "method": p.method().name(), "split": "test", "records": records });
    if p.method().uses_tifo() {
        v["without_operator"] = metrics_json(evaluate(&p.without_operator(), &ds, Split::Test, None, None)?);
    }
    out.write(cfg.out.join("metrics.json"), to_json(&v))?;
    out.log.push(format!("{} evaluation records", cfg.alphas.len() * cfg.ema_decays.len()));
    Ok(out)
}

fn to_json(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json values serialize");
    s.push('\n');
    s
}

/// Train/test spectral shift of the inputs, and of the checkpoint's
/// transformed inputs when `checkpoint` is set.
pub fn cmd_shift(cfg: &RunConfig) -> Result<Output> {
    let mut out = Output::default();
    prepare_out(cfg, &mut out)?;
    let ds = load_dataset(cfg)?;
    let p = match &cfg.checkpoint {
        Some(path) => {
            let p = load_pipeline(path)?;
            check_compatible(&p, &ds)?;
            Some(p)
        }
        None => None,
    };
    let cmp = compare_shift(&ds, p.as_ref(), cfg.hist_bins)?;
    let mut csv = Vec::new();
    cmp.write_csv(&mut csv)?;
    out.write(cfg.out.join("shift.csv"), csv)?;
    out.write(cfg.out.join("shift.json"), to_json(&cmp.summary_json()))?;
    if let Some(n) = &cmp.note {
        out.log.push(n.clone());
    }
    out.log.push(format!("before: mean jsd2 {}, mean ks {}", fmt6(cmp.before.mean_jsd2), fmt6(cmp.before.mean_ks)));
    if let Some(a) = &cmp.after {
        out.log.push(format!("after: mean jsd2 {}, mean ks {}", fmt6(a.mean_jsd2), fmt6(a.mean_ks)));
    }
    Ok(out)
}

/// Parallel cells for `ablate`: `SPECSHIFT_THREADS`, else the CPU count.
pub fn ablation_threads(cells: usize) -> usize {
    let cap = std::env::var("SPECSHIFT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    cap.min(cells).max(1)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

type CellResult = Result<Vec<Vec<(f64, Option<f64>, Metrics)>>>;

/// Cross product of window x keep x metric; every cell trains `repeats`
/// seeds and evaluates every alpha and ema setting.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Output> {
    let mut out = Output::default();
    prepare_out(cfg, &mut out)?;
    let ds = load_dataset(cfg)?;
    let mut cells = Vec::new();
    for &w in &cfg.ablate_windows {
        for &k in &cfg.ablate_keep {
            for &m in &cfg.ablate_metrics {
                let mut c = cfg.clone();
                c.train.window = w;
                c.train.keep = k;
                c.train.metric = m;
                c.scores = None;
                c.out = cfg.out.join(format!("cell{:03}", cells.len()));
                cells.push(c);
            }
        }
    }
    let run_cell = |c: &RunConfig| -> CellResult {
        std::fs::create_dir_all(&c.out).map_err(|e| Error::File { path: c.out.clone(), message: e.to_string() })?;
        std::fs::write(c.out.join(CONFIG_FILE), c.to_text())
            .map_err(|e| Error::File { path: c.out.clone(), message: e.to_string() })?;
        (0..cfg.repeats as u64)
            .map(|r| {
                let mut rc = c.clone();
                rc.train.seed = c.train.seed + r;
                let (p, _) = train_on(&rc, &ds, &mut Vec::new())?;
                eval_records(&p, &ds, &rc)
            })
            .collect()
    };
    let threads = ablation_threads(cells.len());
    let mut results: Vec<Option<CellResult>> = (0..cells.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let chunk = cells.len().div_ceil(threads);
        let handles: Vec<_> = cells
            .chunks(chunk)
            .map(|group| s.spawn(|| group.iter().map(&run_cell).collect::<Vec<_>>()))
            .collect();
        let mut i = 0;
        for h in handles {
            for r in h.join().expect("ablation worker panicked") {
                results[i] = Some(r);
                i += 1;
            }
        }
    });
    let mut csv = String::from("window,keep,metric,alpha,ema_decay,repeats,mse_mean,mse_std,mae_mean,mae_std\n");
    for (c, r) in cells.iter().zip(results) {
        let runs = r.expect("every cell ran")?;
        let t = &c.train;
        for (j, &(a, d, _)) in runs[0].iter().enumerate() {
            let mse: Vec<f64> = runs.iter().map(|run| run[j].2.mse).collect();
            let mae: Vec<f64> = runs.iter().map(|run| run[j].2.mae).collect();
            let ((mm, ms), (am, asd)) = (mean_std(&mse), mean_std(&mae));
            let keep = t.keep.map_or_else(|| "full".to_string(), |k| k.to_string());
            let ema = d.map_or_else(|| "none".to_string(), fmt6);
            let _ = writeln!(
                csv,
                "{},{keep},{},{},{ema},{},{},{},{},{}",
                t.window,
                t.metric,
                fmt6(a),
                cfg.repeats,
                fmt6(mm),
                fmt6(ms),
                fmt6(am),
                fmt6(asd)
            );
        }
    }
    out.write(cfg.out.join("ablation.csv"), csv)?;
    out.log.push(format!("{} cells on {threads} threads", cells.len()));
    Ok(out)
}

/// Write the synthetic shift benchmark as a CSV.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Output> {
    let mut out = Output::default();
    prepare_out(cfg, &mut out)?;
    let set = generate_synthetic(&SyntheticSpec::shift_benchmark(cfg.lookback, cfg.horizon, cfg.train.seed))?;
    let path = cfg.out.join("synthetic.csv");
    write_csv(&synthetic_to_series(&set)?, &path)?;
    out.files.push(path);
    Ok(out)
}
