//! Browser demo: amplitude spectra, per-bin stability scores and early/late
//! spectral shift of a single series.
//!
//! [`demo`] holds the plain Rust operations; the `wasm_bindgen` exports wrap
//! them for JavaScript and turn errors into exceptions.

use wasm_bindgen::prelude::*;

pub mod demo {
    use specshift::shift::{jsd2, ks, paired_histograms, DEFAULT_HIST_BINS};
    use specshift::spectral::{amplitude, apply_window, dft_forward, WindowFn};
    use specshift::stationarity::{entropy_scores, stability_scores, AmplitudePanel, ScoreMetric, DEFAULT_EPSILON};
    use specshift::{Error, Result};

    /// Amplitudes of bins `0..=L/2` after tapering.
    pub fn amplitude_spectrum(x: &[f64], window: &str) -> Result<Vec<f64>> {
        let w: WindowFn = window.parse()?;
        Ok(amplitude(&dft_forward(&apply_window(x, w))?))
    }

    fn panel(series: &[f64], lookback: usize, windows: std::ops::Range<usize>) -> Result<AmplitudePanel> {
        if lookback < 2 || series.len() < lookback + 1 {
            return Err(Error::Invalid(format!("need lookback >= 2 and more than {lookback} values, got {}", series.len())));
        }
        if let Some(v) = series.iter().find(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("series contains {v}")));
        }
        let start = windows.start;
        Ok(AmplitudePanel::from_fn(windows.len(), 1, lookback, WindowFn::Rectangular, |i, _, buf| {
            buf.copy_from_slice(&series[start + i..start + i + lookback]);
        }))
    }

    fn window_count(series: &[f64], lookback: usize) -> usize {
        (series.len() + 1).saturating_sub(lookback)
    }

    /// Scores of every stride-1 window of `series`.
    pub fn stability_profile(series: &[f64], lookback: usize, metric: &str) -> Result<Vec<f64>> {
        let p = panel(series, lookback, 0..window_count(series, lookback))?;
        let s = match metric.parse()? {
            ScoreMetric::MuSigma => stability_scores(&p, DEFAULT_EPSILON)?,
            ScoreMetric::Entropy => entropy_scores(&p)?,
            ScoreMetric::Correlation => return Err(Error::Invalid("the demo has no forecast targets; use mu_sigma or entropy".into())),
        };
        Ok(s.values().to_vec())
    }

    /// Per-bin shift between the windows before and after `split` (a
    /// fraction of the windows).
    #[derive(Clone, Debug, PartialEq)]
    pub struct ShiftProfile {
        pub ks: Vec<f64>,
        pub jsd2: Vec<f64>,
    }

    pub fn shift_profile(series: &[f64], lookback: usize, split: f64) -> Result<ShiftProfile> {
        let n = window_count(series, lookback);
        let cut = (split * n as f64).round() as usize;
        if !(0.0..=1.0).contains(&split) || cut == 0 || cut >= n {
            return Err(Error::Invalid(format!("split {split} leaves an empty side of {n} windows")));
        }
        let (a, b) = (panel(series, lookback, 0..cut)?, panel(series, lookback, cut..n)?);
        let mut out = ShiftProfile { ks: Vec::new(), jsd2: Vec::new() };
        for k in 0..a.bins() {
            let (x, y) = (a.column(k, 0), b.column(k, 0));
            let (p, q) = paired_histograms(&x, &y, DEFAULT_HIST_BINS)?;
            out.ks.push(ks(&x, &y)?);
            out.jsd2.push(jsd2(&p, &q)?);
        }
        Ok(out)
    }
}

fn js(e: specshift::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = amplitudeSpectrum)]
pub fn amplitude_spectrum(x: &[f64], window: &str) -> Result<Vec<f64>, JsError> {
    demo::amplitude_spectrum(x, window).map_err(js)
}

#[wasm_bindgen(js_name = stabilityProfile)]
pub fn stability_profile(series: &[f64], lookback: usize, metric: &str) -> Result<Vec<f64>, JsError> {
    demo::stability_profile(series, lookback, metric).map_err(js)
}

/// KS values of every bin followed by JSD² values of every bin.
#[wasm_bindgen(js_name = shiftProfile)]
pub fn shift_profile(series: &[f64], lookback: usize, split: f64) -> Result<Vec<f64>, JsError> {
    let p = demo::shift_profile(series, lookback, split).map_err(js)?;
    Ok(p.ks.into_iter().chain(p.jsd2).collect())
}
