//! Frequency adaptive normalization.
//!
//! The `k` strongest bins of each input channel form a "main" signal that a
//! dedicated network extrapolates; the backbone only sees the residual.
//! Learnable per-channel weights combine the two forecasts.

use crate::error::{Error, Result};
use crate::models::BackboneModel;
use crate::nn::{component_rng, relu, streams, Dense, Grads, ParamId, ParamStore, Tensor};
use crate::spectral::{bin_count, RealDft};

pub const DEFAULT_TOPK: usize = 4;
const HIDDEN_FREQ: usize = 64;
const HIDDEN_MIX: usize = 128;

/// Indices of the `k` largest amplitudes; equal amplitudes prefer the lower index.
pub fn top_k_bins(amplitudes: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..amplitudes.len()).collect();
    idx.sort_by(|&a, &b| amplitudes[b].total_cmp(&amplitudes[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Split a series into its top-`k` spectral part and the remainder.
pub(crate) fn split_into(dft: &mut RealDft, x: &[f64], k: usize, residual: &mut [f64], filtered: &mut [f64]) {
    let bins = dft.bins();
    let mut re = vec![0.0; bins];
    let mut im = vec![0.0; bins];
    dft.forward_into(x, &mut re, &mut im);
    let amp: Vec<f64> = re.iter().zip(&im).map(|(a, b)| a.hypot(*b)).collect();
    let mut keep = vec![false; bins];
    for j in top_k_bins(&amp, k) {
        keep[j] = true;
    }
    for j in 0..bins {
        if !keep[j] {
            re[j] = 0.0;
            im[j] = 0.0;
        }
    }
    dft.inverse_into(&re, &im, filtered);
    for ((r, a), f) in residual.iter_mut().zip(x).zip(filtered.iter()) {
        *r = a - f;
    }
}

/// `(residual, filtered)` with `filtered` the inverse transform of the
/// spectrum restricted to its `k` strongest bins.
pub fn fan_main_freq_part(x: &[f64], k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let bins = bin_count(x.len());
    if x.len() < 2 {
        return Err(Error::invalid("series needs at least two values"));
    }
    if k == 0 || k > bins {
        return Err(Error::invalid(format!("top-k must lie in 1..={bins}, got {k}")));
    }
    let mut dft = RealDft::new(x.len());
    let mut residual = vec![0.0; x.len()];
    let mut filtered = vec![0.0; x.len()];
    split_into(&mut dft, x, k, &mut residual, &mut filtered);
    Ok((residual, filtered))
}

/// Activations of the main-part network kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct FanCache {
    concat: Vec<f64>,
    hidden: Vec<f64>,
}

/// Parameter handles of the main-part network and the combination weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FanNet {
    freq: Dense,
    mix: Dense,
    out: Dense,
    /// `[2, C]`: row 0 scales the residual forecast, row 1 the main forecast.
    pub combine: ParamId,
    pub topk: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
}

impl FanNet {
    pub fn init(store: &mut ParamStore, lookback: usize, horizon: usize, channels: usize, topk: usize, seed: u64) -> Result<Self> {
        check_topk(lookback, horizon, topk)?;
        let mut rng = component_rng(seed, streams::FAN);
        let freq = Dense::init(store, "fan.freq", lookback, HIDDEN_FREQ, &mut rng, 0.0);
        let mix = Dense::init(store, "fan.mix", HIDDEN_FREQ + lookback, HIDDEN_MIX, &mut rng, 0.0);
        let out = Dense::init(store, "fan.out", HIDDEN_MIX, horizon, &mut rng, 0.0);
        let combine = store.add("fan.w", Tensor { shape: vec![2, channels], data: vec![1.0; 2 * channels] });
        Ok(FanNet { freq, mix, out, combine, topk, lookback, horizon, channels })
    }

    pub fn bind(store: &ParamStore, lookback: usize, horizon: usize, channels: usize, topk: usize) -> Result<Self> {
        check_topk(lookback, horizon, topk)?;
        let get = |n: &str| store.find(n).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{n}`")));
        let dense = |p: &str, inp: usize, out: usize| -> Result<Dense> {
            let w = get(&format!("{p}.w"))?;
            let b = get(&format!("{p}.b"))?;
            if store.tensor(w).shape != [out, inp] || store.tensor(b).shape != [out] {
                return Err(Error::Checkpoint(format!("tensor `{p}.w` has shape {:?}, expected [{out}, {inp}]", store.tensor(w).shape)));
            }
            Ok(Dense { w, b, inp, out })
        };
        let combine = get("fan.w")?;
        if store.tensor(combine).shape != [2, channels] {
            return Err(Error::Checkpoint(format!("tensor `fan.w` has shape {:?}, expected [2, {channels}]", store.tensor(combine).shape)));
        }
        Ok(FanNet {
            freq: dense("fan.freq", lookback, HIDDEN_FREQ)?,
            mix: dense("fan.mix", HIDDEN_FREQ + lookback, HIDDEN_MIX)?,
            out: dense("fan.out", HIDDEN_MIX, horizon)?,
            combine,
            topk,
            lookback,
            horizon,
            channels,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = [self.freq, self.mix, self.out].iter().flat_map(|d| [d.w, d.b]).collect();
        ids.push(self.combine);
        ids
    }

    /// `(w_residual, w_main)` for channel `c`.
    pub fn weights(&self, store: &ParamStore, c: usize) -> (f64, f64) {
        let w = store.get(self.combine);
        (w[c], w[self.channels + c])
    }

    /// Forecast the main part of one channel from its filtered input and the raw input.
    pub fn main_forward(&self, store: &ParamStore, filtered: &[f64], x: &[f64], out: &mut [f64], cache: Option<&mut FanCache>) {
        let mut concat = vec![0.0; HIDDEN_FREQ + self.lookback];
        self.freq.forward(store, filtered, &mut concat[..HIDDEN_FREQ]);
        concat[..HIDDEN_FREQ].iter_mut().for_each(|v| *v = relu(*v));
        concat[HIDDEN_FREQ..].copy_from_slice(x);
        let mut hidden = vec![0.0; HIDDEN_MIX];
        self.mix.forward(store, &concat, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = relu(*v));
        self.out.forward(store, &hidden, out);
        if let Some(cache) = cache {
            cache.concat = concat;
            cache.hidden = hidden;
        }
    }

    /// Accumulate parameter gradients of the main-part network.
    pub fn main_backward(&self, store: &ParamStore, filtered: &[f64], cache: &FanCache, g_out: &[f64], grads: &mut Grads) {
        let mut gh = vec![0.0; HIDDEN_MIX];
        self.out.backward(store, &cache.hidden, g_out, grads, Some(&mut gh));
        gh.iter_mut().zip(&cache.hidden).for_each(|(g, h)| if *h <= 0.0 { *g = 0.0 });
        let mut gc = vec![0.0; HIDDEN_FREQ + self.lookback];
        self.mix.backward(store, &cache.concat, &gh, grads, Some(&mut gc));
        let gf: Vec<f64> = gc[..HIDDEN_FREQ]
            .iter()
            .zip(&cache.concat[..HIDDEN_FREQ])
            .map(|(g, h)| if *h > 0.0 { *g } else { 0.0 })
            .collect();
        self.freq.backward(store, filtered, &gf, grads, None);
    }
}

fn check_topk(lookback: usize, horizon: usize, k: usize) -> Result<()> {
    let max = bin_count(lookback).min(bin_count(horizon));
    if k == 0 || k > max {
        return Err(Error::Config(format!(
            "top-k must lie in 1..={max} for lookback {lookback} and horizon {horizon}, got {k}"
        )));
    }
    Ok(())
}

/// A stand-alone FAN wrapper.
#[derive(Clone, Debug, PartialEq)]
pub struct FanState {
    pub store: ParamStore,
    pub net: FanNet,
}

impl FanState {
    pub fn new(lookback: usize, horizon: usize, channels: usize, topk: usize, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = FanNet::init(&mut store, lookback, horizon, channels, topk, seed)?;
        Ok(FanState { store, net })
    }
}

/// `w_res · backbone(residual) + w_main · MLPfreq(filtered, x)` per channel.
pub fn fan_forward(x: &[f64], state: &FanState, backbone: &BackboneModel) -> Result<Vec<f64>> {
    let net = &state.net;
    let (l, h, c) = (net.lookback, net.horizon, net.channels);
    let spec = &backbone.backbone.spec;
    if x.len() != l * c || spec.lookback != l || spec.horizon != h || spec.channels != c {
        return Err(Error::shape("window, wrapper and backbone shapes disagree"));
    }
    let mut dft = RealDft::new(l);
    let mut res = vec![0.0; l];
    let mut filt = vec![0.0; l];
    let mut y_res = vec![0.0; h];
    let mut y_main = vec![0.0; h];
    let mut out = vec![0.0; h * c];
    for ch in 0..c {
        let xc = &x[ch * l..(ch + 1) * l];
        split_into(&mut dft, xc, net.topk, &mut res, &mut filt);
        backbone.backbone.forward_channel(&backbone.store, ch, &res, &mut y_res, None);
        net.main_forward(&state.store, &filt, xc, &mut y_main, None);
        let (w0, w1) = net.weights(&state.store, ch);
        for t in 0..h {
            out[ch * h + t] = w0 * y_res[t] + w1 * y_main[t];
        }
    }
    Ok(out)
}
