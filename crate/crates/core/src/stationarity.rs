//! Dataset-level stability of every frequency bin.
//!
//! The default score is the inverse coefficient of variation of a bin's
//! amplitude across all training windows: high when a frequency appears with
//! steady energy in every window, low when its energy drifts from window to
//! window.

use std::ops::Range;

use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::spectral::{amplitudes_into, bin_count, RealDft, WindowFn};

/// Denominator guard for the mean/std score.
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Amplitudes `A(i, k, c)` of `N` windows, `K` bins, `C` channels.
#[derive(Clone, Debug, PartialEq)]
pub struct AmplitudePanel {
    samples: usize,
    bins: usize,
    channels: usize,
    // [(i * C + c) * K + k]
    data: Vec<f64>,
}

impl AmplitudePanel {
    pub fn new(samples: usize, bins: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != samples * bins * channels {
            return Err(Error::shape(format!(
                "panel {samples}x{bins}x{channels} needs {} values, got {}",
                samples * bins * channels,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!("amplitude {v} is not a finite non-negative value")));
        }
        Ok(AmplitudePanel { samples, bins, channels, data })
    }

    /// Amplitude spectra of windows stored channel-major (`C × L` per window).
    pub fn from_windows(windows: &[f64], channels: usize, len: usize, window: WindowFn) -> Self {
        let per = channels * len;
        assert!(per > 0 && windows.len().is_multiple_of(per), "window buffer is not a multiple of C×L");
        let samples = windows.len() / per;
        let bins = bin_count(len);
        let mut dft = RealDft::new(len);
        let taps = match window {
            WindowFn::Rectangular => None,
            w => Some(w.taps(len)),
        };
        let mut re = vec![0.0; bins];
        let mut im = vec![0.0; bins];
        let mut data = vec![0.0; samples * channels * bins];
        for (x, out) in windows.chunks_exact(len).zip(data.chunks_exact_mut(bins)) {
            amplitudes_into(&mut dft, x, taps.as_deref(), &mut re, &mut im, out);
        }
        AmplitudePanel { samples, bins, channels, data }
    }

    /// Amplitudes of series produced on demand: `fill(i, c, buf)` writes
    /// sample `i`, channel `c` into a buffer of length `len`.
    pub fn from_fn(
        samples: usize,
        channels: usize,
        len: usize,
        window: WindowFn,
        mut fill: impl FnMut(usize, usize, &mut [f64]),
    ) -> Self {
        let bins = bin_count(len);
        let mut dft = RealDft::new(len);
        let taps = match window {
            WindowFn::Rectangular => None,
            w => Some(w.taps(len)),
        };
        let mut re = vec![0.0; bins];
        let mut im = vec![0.0; bins];
        let mut buf = vec![0.0; len];
        let mut data = vec![0.0; samples * channels * bins];
        for (j, out) in data.chunks_exact_mut(bins).enumerate() {
            fill(j / channels, j % channels, &mut buf);
            amplitudes_into(&mut dft, &buf, taps.as_deref(), &mut re, &mut im, out);
        }
        AmplitudePanel { samples, bins, channels, data }
    }

    /// Amplitudes of the input windows in `range`.
    pub fn from_dataset(ds: &WindowedDataset, range: Range<usize>, window: WindowFn) -> Self {
        let start = range.start;
        Self::from_fn(range.len(), ds.channels, ds.lookback, window, |i, c, buf| {
            buf.copy_from_slice(ds.input(start + i, c))
        })
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn get(&self, i: usize, k: usize, c: usize) -> f64 {
        self.data[(i * self.channels + c) * self.bins + k]
    }

    /// All `N` amplitudes of one `(k, c)` cell.
    pub fn column(&self, k: usize, c: usize) -> Vec<f64> {
        (0..self.samples).map(|i| self.get(i, k, c)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ScoreMetric {
    #[default]
    MuSigma,
    Entropy,
    Correlation,
}

impl ScoreMetric {
    pub fn name(self) -> &'static str {
        match self {
            ScoreMetric::MuSigma => "mu_sigma",
            ScoreMetric::Entropy => "entropy",
            ScoreMetric::Correlation => "correlation",
        }
    }
}

impl std::str::FromStr for ScoreMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu_sigma" => Ok(ScoreMetric::MuSigma),
            "entropy" => Ok(ScoreMetric::Entropy),
            "correlation" | "corr" => Ok(ScoreMetric::Correlation),
            other => Err(Error::Config(format!("unknown score metric `{other}`"))),
        }
    }
}

impl std::fmt::Display for ScoreMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `K × C` stability matrix, stored channel-major so each channel's score
/// vector is contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilityScores {
    bins: usize,
    channels: usize,
    values: Vec<f64>,
    pub metric: ScoreMetric,
    pub epsilon: f64,
    pub samples: usize,
}

impl StabilityScores {
    /// Build from channel-major values (`values[c * K + k]`).
    pub fn from_values(
        bins: usize,
        channels: usize,
        values: Vec<f64>,
        metric: ScoreMetric,
        epsilon: f64,
        samples: usize,
    ) -> Result<Self> {
        if values.len() != bins * channels {
            return Err(Error::shape(format!(
                "scores {bins}x{channels} need {} values, got {}",
                bins * channels,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!("score {v} is not finite and non-negative")));
        }
        Ok(StabilityScores { bins, channels, values, metric, epsilon, samples })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn get(&self, k: usize, c: usize) -> f64 {
        self.values[c * self.bins + k]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.bins..(c + 1) * self.bins]
    }

    /// Channel-major values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = xs.clone().sum::<f64>() / nf;
    let var = xs.map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
    (mean, var.sqrt())
}

/// Mean over standard deviation (population) of each bin's amplitude.
pub fn stability_scores(panel: &AmplitudePanel, epsilon: f64) -> Result<StabilityScores> {
    if panel.samples < 2 {
        return Err(Error::invalid(format!(
            "stability scores need at least 2 windows, got {}",
            panel.samples
        )));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let (n, kk, cc) = (panel.samples, panel.bins, panel.channels);
    let mut values = vec![0.0; kk * cc];
    for c in 0..cc {
        for k in 0..kk {
            let col = (0..n).map(|i| panel.get(i, k, c));
            let (mean, std) = mean_std(col, n);
            values[c * kk + k] = mean / (std + epsilon);
        }
    }
    StabilityScores::from_values(kk, cc, values, ScoreMetric::MuSigma, epsilon, n)
}

/// Inverse spectral entropy weighted by mean spectral mass.
///
/// Per channel, each window's amplitudes are normalized into a distribution
/// over bins (an all-zero window counts as uniform). With `H̄` the mean
/// base-2 entropy over windows and `p̄(k)` the mean mass at bin `k`, the
/// score is `(1 − H̄ / log2 K) · p̄(k) · K`. This closed form is this
/// crate's own choice; the metric is only named, not defined, in the
/// method's description.
pub fn entropy_scores(panel: &AmplitudePanel) -> Result<StabilityScores> {
    if panel.samples < 1 {
        return Err(Error::invalid("entropy scores need at least one window"));
    }
    let (n, kk, cc) = (panel.samples, panel.bins, panel.channels);
    let h_max = (kk as f64).log2();
    let mut values = vec![0.0; kk * cc];
    let mut p = vec![0.0; kk];
    for c in 0..cc {
        let mut mean_mass = vec![0.0; kk];
        let mut mean_entropy = 0.0;
        for i in 0..n {
            let total: f64 = (0..kk).map(|k| panel.get(i, k, c)).sum();
            if total > 0.0 {
                for (k, pk) in p.iter_mut().enumerate() {
                    *pk = panel.get(i, k, c) / total;
                }
            } else {
                p.iter_mut().for_each(|v| *v = 1.0 / kk as f64);
            }
            let h: f64 = p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.log2()).sum();
            mean_entropy += h;
            mean_mass.iter_mut().zip(&p).for_each(|(m, v)| *m += v);
        }
        mean_entropy /= n as f64;
        let concentration = if h_max > 0.0 { (1.0 - mean_entropy / h_max).max(0.0) } else { 0.0 };
        for k in 0..kk {
            values[c * kk + k] = concentration * (mean_mass[k] / n as f64) * kk as f64;
        }
    }
    StabilityScores::from_values(kk, cc, values, ScoreMetric::Entropy, 0.0, n)
}

/// `|Pearson r|` between each bin's amplitude and the mean of the future
/// target window. `target_means[i * C + c]` is sample `i`, channel `c`.
pub fn correlation_scores(panel: &AmplitudePanel, target_means: &[f64]) -> Result<StabilityScores> {
    let (n, kk, cc) = (panel.samples, panel.bins, panel.channels);
    if target_means.len() != n * cc {
        return Err(Error::shape(format!(
            "target means hold {} values, panel needs {n}x{cc}",
            target_means.len()
        )));
    }
    if n < 3 {
        return Err(Error::invalid(format!("correlation scores need at least 3 windows, got {n}")));
    }
    let mut values = vec![0.0; kk * cc];
    for c in 0..cc {
        let t: Vec<f64> = (0..n).map(|i| target_means[i * cc + c]).collect();
        let (tm, ts) = mean_std(t.iter().copied(), n);
        for k in 0..kk {
            let a = (0..n).map(|i| panel.get(i, k, c));
            let (am, as_) = mean_std(a.clone(), n);
            values[c * kk + k] = if ts == 0.0 || as_ == 0.0 {
                0.0
            } else {
                let cov = a.zip(&t).map(|(x, y)| (x - am) * (y - tm)).sum::<f64>() / n as f64;
                (cov / (as_ * ts)).abs().min(1.0)
            };
        }
    }
    StabilityScores::from_values(kk, cc, values, ScoreMetric::Correlation, 0.0, n)
}

/// Online refresh `S' = d·S + (1 − d)·score(batch)`, with the batch scored
/// by the mean/std rule.
pub fn ema_refresh(
    scores: &StabilityScores,
    batch: &AmplitudePanel,
    decay: f64,
) -> Result<StabilityScores> {
    if !(decay > 0.0 && decay < 1.0) {
        return Err(Error::invalid(format!("EMA decay must lie in (0, 1), got {decay}")));
    }
    if batch.bins != scores.bins || batch.channels != scores.channels {
        return Err(Error::shape(format!(
            "batch panel is {}x{}, scores are {}x{}",
            batch.bins, batch.channels, scores.bins, scores.channels
        )));
    }
    let eps = if scores.epsilon > 0.0 { scores.epsilon } else { DEFAULT_EPSILON };
    let fresh = stability_scores(batch, eps)?;
    let values = scores
        .values
        .iter()
        .zip(&fresh.values)
        .map(|(s, b)| decay * s + (1.0 - decay) * b)
        .collect();
    Ok(StabilityScores { values, ..scores.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel_1x1(vals: &[f64]) -> AmplitudePanel {
        AmplitudePanel::new(vals.len(), 1, 1, vals.to_vec()).unwrap()
    }

    #[test]
    fn zero_dispersion_score() {
        let s = stability_scores(&panel_1x1(&[2.0, 2.0, 2.0]), 1e-5).unwrap();
        assert!((s.get(0, 0) - 200000.0).abs() < 1e-6);
    }

    #[test]
    fn one_two_three() {
        let s = stability_scores(&panel_1x1(&[1.0, 2.0, 3.0]), 1e-5).unwrap();
        let want = 2.0 / ((2.0f64 / 3.0).sqrt() + 1e-5);
        assert!((s.get(0, 0) - want).abs() < 1e-12);
        assert!((s.get(0, 0) - 2.44946).abs() < 1e-4);
    }

    #[test]
    fn zeros_and_errors() {
        let s = stability_scores(&panel_1x1(&[0.0, 0.0]), 1e-5).unwrap();
        assert_eq!(s.get(0, 0), 0.0);
        assert!(stability_scores(&panel_1x1(&[1.0]), 1e-5).is_err());
        assert!(stability_scores(&panel_1x1(&[1.0, 2.0]), 0.0).is_err());
        assert!(AmplitudePanel::new(1, 1, 1, vec![-1.0]).is_err());
    }

    #[test]
    fn entropy_degenerate_and_flat() {
        // every sample puts all mass in bin 1 of 3
        let p = AmplitudePanel::new(2, 3, 1, vec![0.0, 5.0, 0.0, 0.0, 2.0, 0.0]).unwrap();
        let s = entropy_scores(&p).unwrap();
        assert_eq!(s.get(0, 0), 0.0);
        assert_eq!(s.get(2, 0), 0.0);
        assert!((s.get(1, 0) - 3.0).abs() < 1e-12);

        let flat = AmplitudePanel::new(2, 4, 1, vec![1.0; 8]).unwrap();
        let s = entropy_scores(&flat).unwrap();
        assert!(s.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn entropy_two_bins() {
        let p = AmplitudePanel::new(2, 2, 1, vec![3.0, 1.0, 0.75, 0.25]).unwrap();
        let s = entropy_scores(&p).unwrap();
        let h = -(0.75f64 * 0.75f64.log2() + 0.25 * 0.25f64.log2());
        assert!((h - 0.8113).abs() < 1e-4);
        assert!((s.get(0, 0) - (1.0 - h) * 0.75 * 2.0).abs() < 1e-12);
        assert!((s.get(1, 0) - (1.0 - h) * 0.25 * 2.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_zero_sample_is_uniform() {
        let p = AmplitudePanel::new(1, 2, 1, vec![0.0, 0.0]).unwrap();
        let s = entropy_scores(&p).unwrap();
        assert!(s.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn correlation_cases() {
        let p = panel_1x1(&[1.0, 2.0, 3.0]);
        let s = correlation_scores(&p, &[3.0, 2.0, 1.0]).unwrap();
        assert!((s.get(0, 0) - 1.0).abs() < 1e-12);
        let s = correlation_scores(&p, &[2.0, 4.0, 6.0]).unwrap();
        assert!((s.get(0, 0) - 1.0).abs() < 1e-12);
        let s = correlation_scores(&panel_1x1(&[5.0, 5.0, 5.0]), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.get(0, 0), 0.0);
        assert!(correlation_scores(&p, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ema_examples() {
        let s = StabilityScores::from_values(1, 1, vec![2.0], ScoreMetric::MuSigma, 1e-5, 4).unwrap();
        // batch {3,5}: mean 4, std 1 → 4 / (1 + 1e-5)
        let batch = panel_1x1(&[3.0, 5.0]);
        let b = 4.0 / (1.0 + 1e-5);
        let out = ema_refresh(&s, &batch, 0.9).unwrap();
        assert!((out.get(0, 0) - (0.9 * 2.0 + 0.1 * b)).abs() < 1e-12);
        assert!((0.9 * 2.0 + 0.1 * 4.0 - 2.2f64).abs() < 1e-12);
        assert_eq!(out.metric, s.metric);
        assert!(ema_refresh(&s, &batch, 1.0).is_err());
        assert!(ema_refresh(&s, &batch, 0.0).is_err());

        let near_one = ema_refresh(&s, &batch, 1.0 - 1e-12).unwrap();
        assert!((near_one.get(0, 0) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn ema_fixed_point() {
        let batch = panel_1x1(&[3.0, 5.0]);
        let s = stability_scores(&batch, 1e-5).unwrap();
        let out = ema_refresh(&s, &batch, 0.7).unwrap();
        assert!((out.get(0, 0) - s.get(0, 0)).abs() < 1e-12);
    }
}
