//! Reversible instance normalization.

use crate::error::{Error, Result};

/// Added to the variance before the square root.
pub const REVIN_EPSILON: f64 = 1e-5;

/// Per-channel statistics of one window, saved for the reverse step.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceStats {
    pub mean: Vec<f64>,
    /// `sqrt(var + ε)`.
    pub std: Vec<f64>,
}

impl InstanceStats {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Z-score one channel into `out`; returns `(mean, sqrt(var + ε))`.
#[inline]
pub(crate) fn normalize_channel(x: &[f64], out: &mut [f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = (var + REVIN_EPSILON).sqrt();
    let inv = 1.0 / std;
    out.iter_mut().zip(x).for_each(|(o, v)| *o = (v - mean) * inv);
    (mean, std)
}

fn channel_len(len: usize, channels: usize) -> Result<usize> {
    if channels == 0 || !len.is_multiple_of(channels) {
        return Err(Error::shape(format!("{len} values do not split into {channels} channels")));
    }
    Ok(len / channels)
}

/// Instance z-score of a channel-major window (`C × L`).
pub fn revin_normalize(x: &[f64], channels: usize) -> Result<(Vec<f64>, InstanceStats)> {
    let l = channel_len(x.len(), channels)?;
    if l < 2 {
        return Err(Error::invalid("instance normalization needs at least two time steps"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("input contains non-finite values"));
    }
    let mut out = vec![0.0; x.len()];
    let mut stats = InstanceStats { mean: Vec::with_capacity(channels), std: Vec::with_capacity(channels) };
    for c in 0..channels {
        let (m, s) = normalize_channel(&x[c * l..(c + 1) * l], &mut out[c * l..(c + 1) * l]);
        stats.mean.push(m);
        stats.std.push(s);
    }
    Ok((out, stats))
}

/// `y = γ·(ŷ·σ + μ) + β`, channel by channel.
pub fn revin_denormalize(y: &[f64], stats: &InstanceStats, gamma: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    let channels = stats.channels();
    if channels == 0 {
        return Err(Error::invalid("no saved statistics to reverse"));
    }
    if gamma.len() != channels || beta.len() != channels || stats.std.len() != channels {
        return Err(Error::shape("affine parameters do not match the saved statistics"));
    }
    let h = channel_len(y.len(), channels)?;
    let mut out = vec![0.0; y.len()];
    for c in 0..channels {
        for t in 0..h {
            out[c * h + t] = gamma[c] * (y[c * h + t] * stats.std[c] + stats.mean[c]) + beta[c];
        }
    }
    Ok(out)
}
