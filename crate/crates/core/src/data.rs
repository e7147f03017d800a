//! Data ingestion, sliding windows, chronological splits, z-scoring and a
//! synthetic generator with condition-dependent spectra.

use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::{component_rng, streams};
use crate::spectral::bin_count;

/// Guard added to the training standard deviation.
pub const ZSCORE_EPSILON: f64 = 1e-8;

/// A multivariate series, stored channel-major (`data[c * rows + t]`).
#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    pub rows: usize,
    pub names: Vec<String>,
    pub timestamps: Option<Vec<String>>,
    pub data: Vec<f64>,
}

impl RawSeries {
    pub fn new(names: Vec<String>, rows: usize, data: Vec<f64>) -> Result<Self> {
        if names.is_empty() || data.len() != names.len() * rows {
            return Err(Error::shape(format!(
                "{} values do not form {rows} rows of {} channels",
                data.len(),
                names.len()
            )));
        }
        Ok(RawSeries { rows, names, timestamps: None, data })
    }

    pub fn channels(&self) -> usize {
        self.names.len()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.rows..(c + 1) * self.rows]
    }

    pub fn value(&self, t: usize, c: usize) -> f64 {
        self.data[c * self.rows + t]
    }
}

fn file_err(path: &Path, message: impl Into<String>) -> Error {
    Error::File { path: path.to_path_buf(), message: message.into() }
}

/// Read a CSV with a header row. A leading column whose first value is not
/// a number is kept as timestamps; every other column must be numeric.
pub fn load_csv(path: &Path) -> Result<RawSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| file_err(path, e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| file_err(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() {
        return Err(file_err(path, "missing header row"));
    }
    let mut skip_first: Option<bool> = None;
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut stamps = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| file_err(path, format!("row {row}: {e}")))?;
        let skip = *skip_first.get_or_insert_with(|| rec.get(0).is_some_and(|v| v.parse::<f64>().is_err()));
        if skip_first == Some(skip) && columns.is_empty() {
            let n = header.len() - usize::from(skip);
            if n == 0 {
                return Err(file_err(path, "no numeric columns"));
            }
            columns = vec![Vec::new(); n];
        }
        for (j, field) in rec.iter().enumerate() {
            if skip && j == 0 {
                stamps.push(field.to_string());
                continue;
            }
            let col = j - usize::from(skip);
            let v: f64 = field.parse().map_err(|_| {
                file_err(path, format!("row {row}, column `{}`: `{field}` is not a number", header[j]))
            })?;
            if !v.is_finite() {
                return Err(file_err(path, format!("row {row}, column `{}`: non-finite value `{field}`", header[j])));
            }
            columns[col].push(v);
        }
    }
    let skip = skip_first.unwrap_or(false);
    if columns.is_empty() {
        return Err(file_err(path, "no data rows"));
    }
    let rows = columns[0].len();
    let names = header[usize::from(skip)..].to_vec();
    let mut series = RawSeries::new(names, rows, columns.concat())?;
    if skip {
        series.timestamps = Some(stamps);
    }
    Ok(series)
}

/// Write a series in the shape [`load_csv`] reads.
pub fn write_csv(series: &RawSeries, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| file_err(path, e.to_string()))?;
    let mut header = Vec::with_capacity(series.channels() + 1);
    if series.timestamps.is_some() {
        header.push("date".to_string());
    }
    header.extend(series.names.iter().cloned());
    w.write_record(&header).map_err(|e| file_err(path, e.to_string()))?;
    let mut rec = Vec::with_capacity(header.len());
    for t in 0..series.rows {
        rec.clear();
        if let Some(ts) = &series.timestamps {
            rec.push(ts[t].clone());
        }
        rec.extend((0..series.channels()).map(|c| format!("{}", series.value(t, c))));
        w.write_record(&rec).map_err(|e| file_err(path, e.to_string()))?;
    }
    w.flush().map_err(|e| file_err(path, e.to_string()))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Contiguous window ranges, ordered train, val, test.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Per-channel statistics fitted on the training windows.
#[derive(Clone, Debug, PartialEq)]
pub struct ZScore {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Input/target window pairs. Windows are views into contiguous segments
/// (one segment per CSV file, one per synthetic sample).
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
    pub names: Vec<String>,
    segments: Vec<Segment>,
    index: Vec<(usize, usize)>,
    pub splits: Splits,
    pub zscore: Option<ZScore>,
}

#[derive(Clone, Debug, PartialEq)]
struct Segment {
    len: usize,
    data: Vec<f64>,
}

impl WindowedDataset {
    /// One window per segment, each segment exactly `lookback + horizon` long.
    pub fn from_samples(samples: &[RawSeries], lookback: usize, horizon: usize, splits: Splits) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Data("no samples".into()))?;
        let channels = first.channels();
        let mut segments = Vec::with_capacity(samples.len());
        for s in samples {
            if s.channels() != channels || s.rows != lookback + horizon {
                return Err(Error::shape("every sample must have the same channels and lookback + horizon rows"));
            }
            segments.push(Segment { len: s.rows, data: s.data.clone() });
        }
        let index = (0..segments.len()).map(|s| (s, 0)).collect();
        let ds = WindowedDataset {
            lookback,
            horizon,
            channels,
            names: first.names.clone(),
            segments,
            index,
            splits,
            zscore: None,
        };
        ds.check_splits()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    #[inline]
    pub fn input(&self, i: usize, c: usize) -> &[f64] {
        let (s, start) = self.index[i];
        let seg = &self.segments[s];
        let o = c * seg.len + start;
        &seg.data[o..o + self.lookback]
    }

    #[inline]
    pub fn target(&self, i: usize, c: usize) -> &[f64] {
        let (s, start) = self.index[i];
        let seg = &self.segments[s];
        let o = c * seg.len + start + self.lookback;
        &seg.data[o..o + self.horizon]
    }

    /// Channel-major copy of input window `i` (`C × L`).
    pub fn input_window(&self, i: usize) -> Vec<f64> {
        (0..self.channels).flat_map(|c| self.input(i, c).iter().copied()).collect()
    }

    /// Channel-major copy of target window `i` (`C × H`).
    pub fn target_window(&self, i: usize) -> Vec<f64> {
        (0..self.channels).flat_map(|c| self.target(i, c).iter().copied()).collect()
    }

    pub fn split_range(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => self.splits.train.clone(),
            Split::Val => self.splits.val.clone(),
            Split::Test => self.splits.test.clone(),
        }
    }

    fn check_splits(&self) -> Result<()> {
        let s = &self.splits;
        if s.train.start != 0 || s.train.end != s.val.start || s.val.end != s.test.start || s.test.end != self.len() {
            return Err(Error::invalid("splits must tile the windows in train, val, test order"));
        }
        Ok(())
    }

    /// Replace the splits after checking they tile the windows.
    pub fn with_splits(mut self, splits: Splits) -> Result<Self> {
        self.splits = splits;
        self.check_splits()?;
        Ok(self)
    }
}

/// Stride-1 windows: input `i` covers rows `[i, i+L)`, its target `[i+L, i+L+H)`.
/// All windows start in the training split until [`chronological_split`] runs.
pub fn make_windows(raw: &RawSeries, lookback: usize, horizon: usize) -> Result<WindowedDataset> {
    if lookback < 2 || horizon < 1 {
        return Err(Error::Config(format!("need lookback >= 2 and horizon >= 1, got {lookback} and {horizon}")));
    }
    if raw.rows < lookback + horizon {
        return Err(Error::Data(format!(
            "series has {} rows, fewer than lookback + horizon = {}",
            raw.rows,
            lookback + horizon
        )));
    }
    let n = raw.rows - lookback - horizon + 1;
    Ok(WindowedDataset {
        lookback,
        horizon,
        channels: raw.channels(),
        names: raw.names.clone(),
        segments: vec![Segment { len: raw.rows, data: raw.data.clone() }],
        index: (0..n).map(|i| (0, i)).collect(),
        splits: Splits { train: 0..n, val: n..n, test: n..n },
        zscore: None,
    })
}

/// Split at `⌊r0·N⌋` and `⌊(r0+r1)·N⌋`.
pub fn chronological_split_with(ds: WindowedDataset, ratios: (f64, f64, f64)) -> Result<WindowedDataset> {
    let n = ds.len();
    if n < 10 {
        return Err(Error::Data(format!("need at least 10 windows to split, got {n}")));
    }
    let (a, b, c) = ratios;
    if a <= 0.0 || b < 0.0 || c < 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must be non-negative and sum to 1, got {a}, {b}, {c}")));
    }
    // The tolerance keeps 0.7 + 0.2 from flooring 0.9·N one short.
    let cut = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
    let (t, v) = (cut(a), cut(a + b));
    ds.with_splits(Splits { train: 0..t, val: t..v, test: v..n })
}

/// The 70/20/10 chronological split.
pub fn chronological_split(ds: WindowedDataset) -> Result<WindowedDataset> {
    chronological_split_with(ds, (0.7, 0.2, 0.1))
}

/// Fit per-channel mean and population std over every value of every
/// training input window (overlapping rows counted once per window), then
/// standardize all segments.
pub fn zscore_fit_apply(mut ds: WindowedDataset) -> Result<WindowedDataset> {
    let z = zscore_fit(&ds)?;
    for seg in &mut ds.segments {
        for c in 0..ds.channels {
            let (m, s) = (z.mean[c], z.std[c]);
            seg.data[c * seg.len..(c + 1) * seg.len].iter_mut().for_each(|v| *v = (*v - m) / s);
        }
    }
    ds.zscore = Some(z);
    Ok(ds)
}

/// Training statistics without applying them.
pub fn zscore_fit(ds: &WindowedDataset) -> Result<ZScore> {
    if ds.splits.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    // Per-segment multiplicity of each row among the training windows.
    let mut counts: Vec<Vec<i64>> = ds.segments.iter().map(|s| vec![0; s.len + 1]).collect();
    for i in ds.splits.train.clone() {
        let (s, start) = ds.index[i];
        counts[s][start] += 1;
        counts[s][start + ds.lookback] -= 1;
    }
    let mut mean = vec![0.0; ds.channels];
    let mut std = vec![0.0; ds.channels];
    for c in 0..ds.channels {
        let (mut n, mut sum) = (0.0, 0.0);
        for (seg, cnt) in ds.segments.iter().zip(&counts) {
            let xs = &seg.data[c * seg.len..(c + 1) * seg.len];
            let mut w = 0i64;
            for (t, &x) in xs.iter().enumerate() {
                w += cnt[t];
                if w > 0 {
                    let wf = w as f64;
                    n += wf;
                    sum += wf * x;
                }
            }
        }
        mean[c] = sum / n;
    }
    for c in 0..ds.channels {
        let (mut n, mut ss) = (0.0, 0.0);
        for (seg, cnt) in ds.segments.iter().zip(&counts) {
            let xs = &seg.data[c * seg.len..(c + 1) * seg.len];
            let mut w = 0i64;
            for (t, &x) in xs.iter().enumerate() {
                w += cnt[t];
                if w > 0 {
                    n += w as f64;
                    ss += w as f64 * (x - mean[c]) * (x - mean[c]);
                }
            }
        }
        std[c] = (ss / n).sqrt() + ZSCORE_EPSILON;
    }
    Ok(ZScore { mean, std })
}

/// Load a CSV, window it, split 70/20/10 and z-score with training statistics.
pub fn prepare_csv(path: &Path, lookback: usize, horizon: usize) -> Result<WindowedDataset> {
    let raw = load_csv(path)?;
    let ds = make_windows(&raw, lookback, horizon)?;
    let ds = chronological_split(ds).map_err(|e| match e {
        Error::Data(m) => file_err(path, m),
        other => other,
    })?;
    zscore_fit_apply(ds)
}

/// One sinusoid of a condition's mixture: `amplitude · sin(2π·freq·n/L + φ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Component {
    pub freq: usize,
    pub amplitude: f64,
}

/// A temporal condition: a frequency mixture plus an optional level and scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub components: Vec<Component>,
    pub offset: f64,
    pub scale: f64,
}

impl Condition {
    pub fn new(components: Vec<Component>) -> Self {
        Condition { components, offset: 0.0, scale: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub conditions: Vec<Condition>,
    pub samples_per_condition: usize,
    /// Frequencies are in cycles per `lookback` samples.
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
    pub noise: f64,
    /// Start every sample at a random point of its condition's waveform.
    /// Off: all samples of a condition share the same phases.
    pub time_shift: bool,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let k = bin_count(self.lookback);
        if self.conditions.is_empty() || self.samples_per_condition == 0 || self.channels == 0 {
            return Err(Error::Config("synthetic data needs conditions, samples and channels".into()));
        }
        if self.lookback < 2 || self.horizon < 1 {
            return Err(Error::Config("synthetic data needs lookback >= 2 and horizon >= 1".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config(format!("noise must be non-negative, got {}", self.noise)));
        }
        for (i, cond) in self.conditions.iter().enumerate() {
            if let Some(c) = cond.components.iter().find(|c| c.freq >= k) {
                return Err(Error::Config(format!(
                    "condition {i}: frequency index {} is not below the bin count {k}",
                    c.freq
                )));
            }
        }
        Ok(())
    }

    /// Three low-frequency training conditions and one high-frequency test
    /// condition, with level and scale drifting between them.
    pub fn shift_benchmark(lookback: usize, horizon: usize, seed: u64) -> Self {
        let k = bin_count(lookback);
        let lo = |f: usize| f.min(k - 1);
        let hi = |f: usize| (k - 1).saturating_sub(f).max(1);
        let c = |f, a| Component { freq: f, amplitude: a };
        let conditions = vec![
            Condition { components: vec![c(lo(1), 1.0), c(lo(2), 0.6), c(hi(6), 0.15)], offset: -1.0, scale: 1.0 },
            Condition { components: vec![c(lo(2), 1.0), c(lo(3), 0.5), c(hi(5), 0.2)], offset: 0.0, scale: 1.5 },
            Condition { components: vec![c(lo(1), 0.8), c(lo(3), 0.8), c(hi(7), 0.2)], offset: 1.0, scale: 0.8 },
            Condition { components: vec![c(lo(2), 0.3), c(hi(6), 1.0), c(hi(4), 0.7)], offset: 3.0, scale: 2.5 },
        ];
        SyntheticSpec {
            conditions,
            samples_per_condition: 50,
            lookback,
            horizon,
            channels: 1,
            noise: 0.1,
            time_shift: true,
            seed,
        }
    }
}

/// Samples grouped by condition; each sample is `lookback + horizon` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSet {
    pub spec: SyntheticSpec,
    pub conditions: Vec<Vec<RawSeries>>,
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticSet> {
    spec.validate()?;
    let mut rng = component_rng(spec.seed, streams::SYNTH);
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).map_err(|e| Error::Config(e.to_string()))?;
    let n = spec.lookback + spec.horizon;
    let names: Vec<String> = (0..spec.channels).map(|c| format!("ch{c}")).collect();
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut out = Vec::with_capacity(spec.conditions.len());
    for cond in &spec.conditions {
        let phases: Vec<f64> = (0..spec.channels * cond.components.len()).map(|_| rng.random_range(0.0..two_pi)).collect();
        let mut samples = Vec::with_capacity(spec.samples_per_condition);
        for _ in 0..spec.samples_per_condition {
            let shift = if spec.time_shift { rng.random_range(0..spec.lookback) as f64 } else { 0.0 };
            let mut data = vec![0.0; spec.channels * n];
            for c in 0..spec.channels {
                for (t, v) in data[c * n..(c + 1) * n].iter_mut().enumerate() {
                    let time = t as f64 + shift;
                    let mut s = 0.0;
                    for (j, comp) in cond.components.iter().enumerate() {
                        let phi = phases[c * cond.components.len() + j];
                        s += comp.amplitude * (two_pi * comp.freq as f64 * time / spec.lookback as f64 + phi).sin();
                    }
                    if spec.noise > 0.0 {
                        s += noise.sample(&mut rng);
                    }
                    *v = cond.offset + cond.scale * s;
                }
            }
            samples.push(RawSeries::new(names.clone(), n, data)?);
        }
        out.push(samples);
    }
    Ok(SyntheticSet { spec: spec.clone(), conditions: out })
}

/// Windows for the shift benchmark: every condition but the last trains
/// (its final `val_fraction` validates), the last condition is the test set.
/// Z-scored with training statistics.
pub fn synthetic_dataset(set: &SyntheticSet, val_fraction: f64) -> Result<WindowedDataset> {
    if set.conditions.len() < 2 {
        return Err(Error::Config("need at least one training and one test condition".into()));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!("validation fraction must lie in [0, 1), got {val_fraction}")));
    }
    let (test, train_conds) = set.conditions.split_last().expect("checked above");
    let mut train = Vec::new();
    let mut val = Vec::new();
    for cond in train_conds {
        let n_val = (cond.len() as f64 * val_fraction).floor() as usize;
        let cut = cond.len() - n_val;
        train.extend_from_slice(&cond[..cut]);
        val.extend_from_slice(&cond[cut..]);
    }
    let (a, b, c) = (train.len(), val.len(), test.len());
    let mut all = train;
    all.extend(val);
    all.extend_from_slice(test);
    let splits = Splits { train: 0..a, val: a..a + b, test: a + b..a + b + c };
    let ds = WindowedDataset::from_samples(&all, set.spec.lookback, set.spec.horizon, splits)?;
    zscore_fit_apply(ds)
}

/// Concatenate all samples into one series with a text id column
/// (`c<condition>-s<sample>-t<step>`), loadable by [`load_csv`].
pub fn synthetic_to_series(set: &SyntheticSet) -> Result<RawSeries> {
    let channels = set.spec.channels;
    let n = set.spec.lookback + set.spec.horizon;
    let total: usize = set.conditions.iter().map(|c| c.len()).sum::<usize>() * n;
    let mut data = vec![0.0; channels * total];
    let mut stamps = Vec::with_capacity(total);
    let mut row = 0;
    for (ci, cond) in set.conditions.iter().enumerate() {
        for (si, s) in cond.iter().enumerate() {
            for t in 0..n {
                stamps.push(format!("c{ci}-s{si}-t{t}"));
                for c in 0..channels {
                    data[c * total + row] = s.value(t, c);
                }
                row += 1;
            }
        }
    }
    let names = (0..channels).map(|c| format!("ch{c}")).collect();
    let mut series = RawSeries::new(names, total, data)?;
    series.timestamps = Some(stamps);
    Ok(series)
}
