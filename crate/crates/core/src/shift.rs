//! Train/test distribution shift of every frequency bin's amplitude.

use std::io::Write;
use std::ops::Range;

use serde_json::json;

use crate::data::{Split, WindowedDataset};
use crate::error::{Error, Result};
use crate::report::{fmt6, sig6};
use crate::stationarity::AmplitudePanel;
use crate::training::Pipeline;

pub const DEFAULT_HIST_BINS: usize = 50;

/// Histograms of `a` and `b` over `bins` equal-width bins spanning both
/// samples, normalized to probability mass. Identical values everywhere put
/// all mass in bin 0.
pub fn paired_histograms(a: &[f64], b: &[f64], bins: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("histograms need non-empty samples"));
    }
    if bins < 2 {
        return Err(Error::invalid(format!("need at least 2 histogram bins, got {bins}")));
    }
    let (lo, hi) = a.iter().chain(b).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid("samples contain non-finite values"));
    }
    let width = hi - lo;
    let fill = |xs: &[f64]| {
        let mut h = vec![0.0; bins];
        for &v in xs {
            let j = if width > 0.0 { (((v - lo) / width) * bins as f64) as usize } else { 0 };
            h[j.min(bins - 1)] += 1.0;
        }
        let n = xs.len() as f64;
        h.iter_mut().for_each(|v| *v /= n);
        h
    };
    Ok((fill(a), fill(b)))
}

/// Base-2 Jensen–Shannon divergence (the squared JS distance), in `[0, 1]`.
pub fn jsd2(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::shape("distributions differ in length"));
    }
    for d in [p, q] {
        let sum: f64 = d.iter().sum();
        if d.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("not a probability vector (sum {sum})")));
        }
    }
    let kl_half = |a: f64, m: f64| if a > 0.0 { a * (a / m).log2() } else { 0.0 };
    let mut d = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let m = 0.5 * (a + b);
        d += 0.5 * kl_half(a, m) + 0.5 * kl_half(b, m);
    }
    Ok(d.clamp(0.0, 1.0))
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("KS statistic needs non-empty samples"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(ks_sorted(&a, &b))
}

fn ks_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Per-bin shift between two amplitude panels, channel-major (`[c * K + k]`).
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftReport {
    pub bins: usize,
    pub channels: usize,
    pub hist_bins: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub jsd2: Vec<f64>,
    pub ks: Vec<f64>,
    pub mean_jsd2: f64,
    pub mean_ks: f64,
}

impl ShiftReport {
    /// Radius of the smallest origin-centred circle in the (JSD², KS) plane
    /// holding 60% of the bins (nearest-rank percentile).
    pub fn radius60(&self) -> f64 {
        let mut r: Vec<f64> = self.jsd2.iter().zip(&self.ks).map(|(a, b)| a.hypot(*b)).collect();
        r.sort_by(f64::total_cmp);
        let rank = ((0.6 * r.len() as f64).ceil() as usize).max(1);
        r[rank - 1]
    }
}

pub fn shift_report(train: &AmplitudePanel, test: &AmplitudePanel, hist_bins: usize) -> Result<ShiftReport> {
    if train.bins() != test.bins() || train.channels() != test.channels() {
        return Err(Error::shape(format!(
            "train panel is {}x{}, test panel {}x{}",
            train.bins(),
            train.channels(),
            test.bins(),
            test.channels()
        )));
    }
    let (k, c) = (train.bins(), train.channels());
    let mut jsd = Vec::with_capacity(k * c);
    let mut kss = Vec::with_capacity(k * c);
    for ch in 0..c {
        for bin in 0..k {
            let mut a = train.column(bin, ch);
            let mut b = test.column(bin, ch);
            let (p, q) = paired_histograms(&a, &b, hist_bins)?;
            jsd.push(jsd2(&p, &q)?);
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            kss.push(ks_sorted(&a, &b));
        }
    }
    let n = (k * c) as f64;
    Ok(ShiftReport {
        bins: k,
        channels: c,
        hist_bins,
        train_samples: train.samples(),
        test_samples: test.samples(),
        mean_jsd2: jsd.iter().sum::<f64>() / n,
        mean_ks: kss.iter().sum::<f64>() / n,
        jsd2: jsd,
        ks: kss,
    })
}

/// Amplitudes of what a pipeline's backbone sees for windows `range`.
/// `None` when the pipeline has no input transform.
pub fn transformed_panel(p: &Pipeline, ds: &WindowedDataset, range: Range<usize>) -> Result<Option<AmplitudePanel>> {
    if !p.has_input_transform() {
        return Ok(None);
    }
    let w = p.frequency_weights()?;
    let start = range.start;
    let mut err = None;
    let panel = AmplitudePanel::from_fn(range.len(), ds.channels, ds.lookback, p.config.window, |i, c, buf| {
        match p.transform_input(ds.input(start + i, c), c, w.as_ref()) {
            Ok(Some(v)) => buf.copy_from_slice(&v),
            Ok(None) => {}
            Err(e) => err = Some(e),
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(Some(panel)),
    }
}

/// Shift of the raw inputs and, with a pipeline, of its transformed inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftComparison {
    pub before: ShiftReport,
    pub after: Option<ShiftReport>,
    pub method: Option<String>,
    pub note: Option<String>,
}

/// Train-vs-test shift of a dataset's inputs, before and after a pipeline's
/// input transform. Amplitudes use the pipeline's window function, or the
/// rectangular window without a pipeline.
pub fn compare_shift(ds: &WindowedDataset, pipeline: Option<&Pipeline>, hist_bins: usize) -> Result<ShiftComparison> {
    let window = pipeline.map(|p| p.config.window).unwrap_or_default();
    let (tr, te) = (ds.split_range(Split::Train), ds.split_range(Split::Test));
    let before = shift_report(
        &AmplitudePanel::from_dataset(ds, tr.clone(), window),
        &AmplitudePanel::from_dataset(ds, te.clone(), window),
        hist_bins,
    )?;
    let mut cmp = ShiftComparison { before, after: None, method: None, note: None };
    if let Some(p) = pipeline {
        cmp.method = Some(p.method().name().to_string());
        match (transformed_panel(p, ds, tr)?, transformed_panel(p, ds, te)?) {
            (Some(a), Some(b)) => cmp.after = Some(shift_report(&a, &b, hist_bins)?),
            _ => cmp.note = Some(format!("method `{}` has no input transform; After omitted", p.method())),
        }
    }
    Ok(cmp)
}

fn reduction(before: f64, after: f64) -> f64 {
    if before > 0.0 {
        1.0 - after / before
    } else {
        0.0
    }
}

impl ShiftComparison {
    /// Relative reduction of mean JSD² and mean KS, when After exists.
    pub fn reductions(&self) -> Option<(f64, f64)> {
        self.after.as_ref().map(|a| (reduction(self.before.mean_jsd2, a.mean_jsd2), reduction(self.before.mean_ks, a.mean_ks)))
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "channel,freq_index,jsd2_before,jsd2_after,ks_before,ks_after")?;
        let b = &self.before;
        for c in 0..b.channels {
            for k in 0..b.bins {
                let j = c * b.bins + k;
                let (ja, ka) = match &self.after {
                    Some(a) => (fmt6(a.jsd2[j]), fmt6(a.ks[j])),
                    None => (String::new(), String::new()),
                };
                writeln!(w, "{c},{k},{},{ja},{},{ka}", fmt6(b.jsd2[j]), fmt6(b.ks[j]))?;
            }
        }
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let part = |r: &ShiftReport| {
            json!({
                "mean_jsd2": sig6(r.mean_jsd2),
                "mean_ks": sig6(r.mean_ks),
                "radius60": sig6(r.radius60()),
            })
        };
        let b = &self.before;
        let mut v = json!({
            "bins": b.bins,
            "channels": b.channels,
            "hist_bins": b.hist_bins,
            "train_samples": b.train_samples,
            "test_samples": b.test_samples,
            "before": part(b),
            "after": self.after.as_ref().map(part),
            "method": self.method,
        });
        if let Some((dj, dk)) = self.reductions() {
            v["reduction"] = json!({ "jsd2": sig6(dj), "ks": sig6(dk) });
        }
        if let Some(n) = &self.note {
            v["note"] = json!(n);
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_examples() {
        let (p, q) = paired_histograms(&[0.0, 0.0], &[1.0, 1.0], 2).unwrap();
        assert_eq!((p, q), (vec![1.0, 0.0], vec![0.0, 1.0]));
        let (p, q) = paired_histograms(&[3.0; 4], &[3.0; 2], 5).unwrap();
        assert_eq!(p, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(p, q);
        let a = [0.1, 0.5, 0.7];
        let (p, q) = paired_histograms(&a, &a, 4).unwrap();
        assert_eq!(p, q);
        assert!(paired_histograms(&[], &[1.0], 2).is_err());
        assert!(paired_histograms(&[1.0], &[1.0], 1).is_err());
    }

    #[test]
    fn jsd_examples() {
        assert_eq!(jsd2(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        assert!((jsd2(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((jsd2(&[0.5, 0.5], &[1.0, 0.0]).unwrap() - 0.31128).abs() < 1e-5);
        assert!(jsd2(&[0.5, 0.6], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(ks(&[0.0; 3], &[1.0; 3]).unwrap(), 1.0);
        assert_eq!(ks(&[1.0, 2.0, 3.0, 4.0], &[3.0, 4.0, 5.0, 6.0]).unwrap(), 0.5);
        assert!(ks(&[], &[1.0]).is_err());
    }

    #[test]
    fn report_of_identical_panels_is_zero() {
        let panel = AmplitudePanel::new(3, 2, 1, vec![1.0, 2.0, 1.5, 2.5, 0.5, 3.0]).unwrap();
        let r = shift_report(&panel, &panel, 10).unwrap();
        assert!(r.jsd2.iter().chain(&r.ks).all(|v| *v == 0.0));
        let far = AmplitudePanel::new(3, 2, 1, panel.as_slice().iter().map(|v| v + 100.0).collect()).unwrap();
        let r = shift_report(&panel, &far, 10).unwrap();
        assert!(r.ks.iter().all(|v| *v == 1.0));
    }
}
