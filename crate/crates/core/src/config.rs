//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::shift::DEFAULT_HIST_BINS;
use crate::spectral::WindowFn;
use crate::stationarity::ScoreMetric;
use crate::training::TrainConfig;

/// Where windows come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    /// The built-in frequency-shift benchmark, seeded by the run seed.
    Synthetic,
}

impl DataSource {
    fn parse(s: &str) -> DataSource {
        if s == "synthetic" {
            DataSource::Synthetic
        } else {
            DataSource::Csv(PathBuf::from(s))
        }
    }

    fn text(&self) -> String {
        match self {
            DataSource::Synthetic => "synthetic".into(),
            DataSource::Csv(p) => p.display().to_string(),
        }
    }
}

/// Everything one command needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataSource,
    pub lookback: usize,
    pub horizon: usize,
    pub train: TrainConfig,
    pub hist_bins: usize,
    pub out: PathBuf,
    /// Scores file to reuse; fitted on the fly when absent.
    pub scores: Option<PathBuf>,
    /// Checkpoint for `eval` and `shift`.
    pub checkpoint: Option<PathBuf>,
    /// Alpha values swept by `eval` and `ablate`.
    pub alphas: Vec<f64>,
    /// EMA settings swept by `eval` and `ablate`; `None` is no refresh.
    pub ema_decays: Vec<Option<f64>>,
    pub ablate_windows: Vec<WindowFn>,
    /// Truncation settings; `None` keeps the full spectrum.
    pub ablate_keep: Vec<Option<usize>>,
    pub ablate_metrics: Vec<ScoreMetric>,
    pub repeats: usize,
    /// Held-out share of each training condition of the synthetic benchmark.
    pub synth_val_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        RunConfig {
            data: DataSource::Synthetic,
            lookback: 96,
            horizon: 96,
            hist_bins: DEFAULT_HIST_BINS,
            out: PathBuf::from("out"),
            scores: None,
            checkpoint: None,
            alphas: vec![train.alpha],
            ema_decays: vec![None],
            ablate_windows: vec![train.window],
            ablate_keep: vec![train.keep],
            ablate_metrics: vec![train.metric],
            repeats: 1,
            synth_val_fraction: 0.2,
            train,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_list<T>(key: &str, v: &str, item: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let items: Vec<T> = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(item).collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("`{key}` must list at least one value")));
    }
    Ok(items)
}

fn parse_opt<T: FromStr>(key: &str, v: &str, none: &str) -> Result<Option<T>> {
    if v == none {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

fn opt_text<T: ToString>(v: &Option<T>, none: &str) -> String {
    v.as_ref().map_or_else(|| none.to_string(), ToString::to_string)
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(",")
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

impl RunConfig {
    /// Set one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let t = &mut self.train;
        match key {
            "data" => self.data = DataSource::parse(v),
            "lookback" => self.lookback = parse(key, v)?,
            "horizon" => self.horizon = parse(key, v)?,
            "method" => t.method = v.parse()?,
            "backbone" => t.backbone = v.parse()?,
            "lr" => t.lr = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "max_epochs" => t.max_epochs = parse(key, v)?,
            "patience" => t.patience = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "alpha" => t.alpha = parse(key, v)?,
            "ema_decay" => t.ema_decay = parse_opt(key, v, "none")?,
            "hidden" => t.hidden = parse(key, v)?,
            "metric" => t.metric = v.parse()?,
            "score_epsilon" => t.score_epsilon = parse(key, v)?,
            "window" => t.window = v.parse()?,
            "keep" => t.keep = parse_opt(key, v, "full")?,
            "tifo_norm" => t.tifo_norm = v.parse()?,
            "individual" => t.individual = parse_bool(key, v)?,
            "kernel" => t.kernel = parse(key, v)?,
            "san_patch" => t.san_patch = parse(key, v)?,
            "san_epochs" => t.san_epochs = parse(key, v)?,
            "fan_topk" => t.fan_topk = parse(key, v)?,
            "hist_bins" => self.hist_bins = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "scores" => self.scores = (!v.is_empty()).then(|| PathBuf::from(v)),
            "checkpoint" => self.checkpoint = (!v.is_empty()).then(|| PathBuf::from(v)),
            "alphas" => self.alphas = parse_list(key, v, |s| parse(key, s))?,
            "ema_decays" => self.ema_decays = parse_list(key, v, |s| parse_opt(key, s, "none"))?,
            "ablate_windows" => self.ablate_windows = parse_list(key, v, |s| s.parse())?,
            "ablate_keep" => self.ablate_keep = parse_list(key, v, |s| parse_opt(key, s, "full"))?,
            "ablate_metrics" => self.ablate_metrics = parse_list(key, v, |s| s.parse())?,
            "repeats" => self.repeats = parse(key, v)?,
            "synth_val_fraction" => self.synth_val_fraction = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parse `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(k.trim(), v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => Error::Config(format!("line {}: {other}", n + 1)),
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        RunConfig::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Every key in a fixed order; parses back to an equal value.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let rows: Vec<(&str, String)> = vec![
            ("data", self.data.text()),
            ("lookback", self.lookback.to_string()),
            ("horizon", self.horizon.to_string()),
            ("method", t.method.to_string()),
            ("backbone", t.backbone.to_string()),
            ("lr", t.lr.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("max_epochs", t.max_epochs.to_string()),
            ("patience", t.patience.to_string()),
            ("seed", t.seed.to_string()),
            ("alpha", t.alpha.to_string()),
            ("ema_decay", opt_text(&t.ema_decay, "none")),
            ("hidden", t.hidden.to_string()),
            ("metric", t.metric.to_string()),
            ("score_epsilon", t.score_epsilon.to_string()),
            ("window", t.window.to_string()),
            ("keep", opt_text(&t.keep, "full")),
            ("tifo_norm", t.tifo_norm.to_string()),
            ("individual", t.individual.to_string()),
            ("kernel", t.kernel.to_string()),
            ("san_patch", t.san_patch.to_string()),
            ("san_epochs", t.san_epochs.to_string()),
            ("fan_topk", t.fan_topk.to_string()),
            ("hist_bins", self.hist_bins.to_string()),
            ("out", self.out.display().to_string()),
            ("scores", path(&self.scores)),
            ("checkpoint", path(&self.checkpoint)),
            ("alphas", join(&self.alphas, f64::to_string)),
            ("ema_decays", join(&self.ema_decays, |d| opt_text(d, "none"))),
            ("ablate_windows", join(&self.ablate_windows, ToString::to_string)),
            ("ablate_keep", join(&self.ablate_keep, |k| opt_text(k, "full"))),
            ("ablate_metrics", join(&self.ablate_metrics, ToString::to_string)),
            ("repeats", self.repeats.to_string()),
            ("synth_val_fraction", self.synth_val_fraction.to_string()),
        ];
        let mut s = String::new();
        for (k, v) in rows {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.lookback < 2 || self.horizon < 1 {
            return bad(format!("need lookback >= 2 and horizon >= 1, got {} and {}", self.lookback, self.horizon));
        }
        if self.hist_bins < 2 {
            return bad(format!("hist_bins must be at least 2, got {}", self.hist_bins));
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        if let Some(a) = self.alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return bad(format!("alphas must lie in [0, 1], got {a}"));
        }
        if let Some(d) = self.ema_decays.iter().flatten().find(|d| !(**d > 0.0 && **d < 1.0)) {
            return bad(format!("ema_decays must lie in (0, 1), got {d}"));
        }
        if self.alphas.is_empty()
            || self.ema_decays.is_empty()
            || self.ablate_windows.is_empty()
            || self.ablate_keep.is_empty()
            || self.ablate_metrics.is_empty()
        {
            return bad("sweep and ablation lists must not be empty".into());
        }
        if !(0.0..1.0).contains(&self.synth_val_fraction) {
            return bad(format!("synth_val_fraction must lie in [0, 1), got {}", self.synth_val_fraction));
        }
        Ok(())
    }
}
