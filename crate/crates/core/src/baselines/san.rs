//! Patch-wise adaptive normalization with a learned statistics predictor.
//!
//! Stage 1 fits two small networks that map the per-patch means and
//! variances of an input window to those of its target window. Stage 2
//! freezes them: inputs are z-scored patch by patch and the backbone's
//! output is rescaled with the predicted target statistics.

use rand::seq::SliceRandom;

use crate::data::{Split, WindowedDataset};
use crate::error::{Error, Result};
use crate::nn::{component_rng, relu, sigmoid, softplus, streams, Dense, Grads, ParamId, ParamStore};
use crate::training::{adam_step, AdamState};

pub const DEFAULT_PATCH: usize = 12;
pub const SAN_HIDDEN: usize = 64;
/// Added to patch variances before the square root.
pub const SAN_EPSILON: f64 = 1e-5;
/// Initial hidden bias. Variances are non-negative, so a zero bias would
/// leave every hidden unit either dead or linear in its input.
const HIDDEN_BIAS: f64 = 0.1;

/// Mean and population variance of consecutive patches of length `p`.
pub fn patch_stats(x: &[f64], p: usize, means: &mut [f64], vars: &mut [f64]) {
    for (j, chunk) in x.chunks_exact(p).enumerate() {
        let m = chunk.iter().sum::<f64>() / p as f64;
        means[j] = m;
        vars[j] = chunk.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / p as f64;
    }
}

/// Check that `len` splits into whole patches; suggest a patch length otherwise.
pub fn check_patch(lookback: usize, horizon: usize, p: usize) -> Result<()> {
    if p == 0 || !lookback.is_multiple_of(p) || !horizon.is_multiple_of(p) {
        let g = gcd(lookback, horizon);
        let suggestion = (1..=g.min(DEFAULT_PATCH.max(1))).rev().find(|d| g.is_multiple_of(*d)).unwrap_or(1);
        return Err(Error::Config(format!(
            "patch length {p} must divide lookback {lookback} and horizon {horizon}; try {suggestion}"
        )));
    }
    Ok(())
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Predicted target statistics for one window, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SanStats {
    pub out_patches: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Parameter handles of the statistics predictor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SanNet {
    mean_in: Dense,
    mean_out: Dense,
    var_in: Dense,
    var_out: Dense,
    pub patch: usize,
    pub in_patches: usize,
    pub out_patches: usize,
}

struct PairCache {
    hm: Vec<f64>,
    hv: Vec<f64>,
    pre_var: Vec<f64>,
}

impl SanNet {
    pub fn init(store: &mut ParamStore, lookback: usize, horizon: usize, patch: usize, seed: u64) -> Result<Self> {
        check_patch(lookback, horizon, patch)?;
        let (n_in, n_out) = (lookback / patch, horizon / patch);
        let mut rng = component_rng(seed, streams::SAN);
        let mean_in = Dense::init(store, "san.mean.l1", n_in, SAN_HIDDEN, &mut rng, HIDDEN_BIAS);
        let mean_out = Dense::init(store, "san.mean.l2", SAN_HIDDEN, n_out, &mut rng, 0.0);
        let var_in = Dense::init(store, "san.var.l1", n_in, SAN_HIDDEN, &mut rng, HIDDEN_BIAS);
        let var_out = Dense::init(store, "san.var.l2", SAN_HIDDEN, n_out, &mut rng, 0.0);
        Ok(SanNet { mean_in, mean_out, var_in, var_out, patch, in_patches: n_in, out_patches: n_out })
    }

    pub fn bind(store: &ParamStore, lookback: usize, horizon: usize, patch: usize) -> Result<Self> {
        check_patch(lookback, horizon, patch)?;
        let (n_in, n_out) = (lookback / patch, horizon / patch);
        let dense = |prefix: &str, inp: usize, out: usize| -> Result<Dense> {
            let get = |n: String| store.find(&n).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{n}`")));
            let w = get(format!("{prefix}.w"))?;
            let b = get(format!("{prefix}.b"))?;
            if store.tensor(w).shape != [out, inp] || store.tensor(b).shape != [out] {
                return Err(Error::Checkpoint(format!("tensor `{prefix}.w` has shape {:?}, expected [{out}, {inp}]", store.tensor(w).shape)));
            }
            Ok(Dense { w, b, inp, out })
        };
        Ok(SanNet {
            mean_in: dense("san.mean.l1", n_in, SAN_HIDDEN)?,
            mean_out: dense("san.mean.l2", SAN_HIDDEN, n_out)?,
            var_in: dense("san.var.l1", n_in, SAN_HIDDEN)?,
            var_out: dense("san.var.l2", SAN_HIDDEN, n_out)?,
            patch,
            in_patches: n_in,
            out_patches: n_out,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [self.mean_in, self.mean_out, self.var_in, self.var_out].iter().flat_map(|d| [d.w, d.b]).collect()
    }

    fn predict_into(&self, store: &ParamStore, mu_x: &[f64], var_x: &[f64], mu_y: &mut [f64], var_y: &mut [f64]) -> PairCache {
        let mut hm = vec![0.0; SAN_HIDDEN];
        self.mean_in.forward(store, mu_x, &mut hm);
        hm.iter_mut().for_each(|v| *v = relu(*v));
        self.mean_out.forward(store, &hm, mu_y);

        let mut hv = vec![0.0; SAN_HIDDEN];
        self.var_in.forward(store, var_x, &mut hv);
        hv.iter_mut().for_each(|v| *v = relu(*v));
        let mut pre_var = vec![0.0; self.out_patches];
        self.var_out.forward(store, &hv, &mut pre_var);
        var_y.iter_mut().zip(&pre_var).for_each(|(o, v)| *o = softplus(*v));
        PairCache { hm, hv, pre_var }
    }

    /// Predict target-patch `(means, variances)` from input-patch statistics.
    pub fn predict(&self, store: &ParamStore, mu_x: &[f64], var_x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut mu_y = vec![0.0; self.out_patches];
        let mut var_y = vec![0.0; self.out_patches];
        self.predict_into(store, mu_x, var_x, &mut mu_y, &mut var_y);
        (mu_y, var_y)
    }

    #[allow(clippy::too_many_arguments)]
    fn backward(&self, store: &ParamStore, mu_x: &[f64], var_x: &[f64], cache: &PairCache, g_mu: &[f64], g_var: &[f64], grads: &mut Grads) {
        let mut gh = vec![0.0; SAN_HIDDEN];
        self.mean_out.backward(store, &cache.hm, g_mu, grads, Some(&mut gh));
        gh.iter_mut().zip(&cache.hm).for_each(|(g, h)| if *h <= 0.0 { *g = 0.0 });
        self.mean_in.backward(store, mu_x, &gh, grads, None);

        let g_pre: Vec<f64> = g_var.iter().zip(&cache.pre_var).map(|(g, v)| g * sigmoid(*v)).collect();
        self.var_out.backward(store, &cache.hv, &g_pre, grads, Some(&mut gh));
        gh.iter_mut().zip(&cache.hv).for_each(|(g, h)| if *h <= 0.0 { *g = 0.0 });
        self.var_in.backward(store, var_x, &gh, grads, None);
    }

    /// Patch-normalize one channel into `out` and predict its target statistics.
    pub fn normalize_channel(&self, store: &ParamStore, x: &[f64], out: &mut [f64], mu_y: &mut [f64], var_y: &mut [f64]) {
        let mut mu = vec![0.0; self.in_patches];
        let mut var = vec![0.0; self.in_patches];
        patch_stats(x, self.patch, &mut mu, &mut var);
        for (j, (chunk, o)) in x.chunks_exact(self.patch).zip(out.chunks_exact_mut(self.patch)).enumerate() {
            let inv = 1.0 / (var[j] + SAN_EPSILON).sqrt();
            o.iter_mut().zip(chunk).for_each(|(o, v)| *o = (v - mu[j]) * inv);
        }
        self.predict_into(store, &mu, &var, mu_y, var_y);
    }

    /// Rescale one channel of backbone output with predicted statistics.
    pub fn denormalize_channel(&self, y: &[f64], mu_y: &[f64], var_y: &[f64], out: &mut [f64]) {
        for (j, (chunk, o)) in y.chunks_exact(self.patch).zip(out.chunks_exact_mut(self.patch)).enumerate() {
            let s = (var_y[j] + SAN_EPSILON).sqrt();
            o.iter_mut().zip(chunk).for_each(|(o, v)| *o = v * s + mu_y[j]);
        }
    }

    /// Stage-1 fit on the training split. Returns the mean loss before
    /// training followed by one entry per epoch.
    pub fn fit(&self, store: &mut ParamStore, data: &WindowedDataset, opts: &SanFit) -> Result<Vec<f64>> {
        let range = data.split_range(Split::Train);
        let (n_in, n_out, c) = (self.in_patches, self.out_patches, data.channels);
        let pairs = range.len() * c;
        if pairs == 0 {
            return Err(Error::Data("statistics predictor needs training windows".into()));
        }
        let mut mx = vec![0.0; pairs * n_in];
        let mut vx = vec![0.0; pairs * n_in];
        let mut my = vec![0.0; pairs * n_out];
        let mut vy = vec![0.0; pairs * n_out];
        for (j, i) in range.clone().enumerate() {
            for ch in 0..c {
                let p = j * c + ch;
                patch_stats(data.input(i, ch), self.patch, &mut mx[p * n_in..(p + 1) * n_in], &mut vx[p * n_in..(p + 1) * n_in]);
                patch_stats(data.target(i, ch), self.patch, &mut my[p * n_out..(p + 1) * n_out], &mut vy[p * n_out..(p + 1) * n_out]);
            }
        }
        let pair_loss = |store: &ParamStore, p: usize, grads: Option<&mut Grads>| -> f64 {
            let (xm, xv) = (&mx[p * n_in..(p + 1) * n_in], &vx[p * n_in..(p + 1) * n_in]);
            let (tm, tv) = (&my[p * n_out..(p + 1) * n_out], &vy[p * n_out..(p + 1) * n_out]);
            let mut pm = vec![0.0; n_out];
            let mut pv = vec![0.0; n_out];
            let cache = self.predict_into(store, xm, xv, &mut pm, &mut pv);
            let nf = n_out as f64;
            let loss = pm.iter().zip(tm).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / nf
                + pv.iter().zip(tv).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / nf;
            if let Some(grads) = grads {
                let gm: Vec<f64> = pm.iter().zip(tm).map(|(a, b)| 2.0 * (a - b) / nf).collect();
                let gv: Vec<f64> = pv.iter().zip(tv).map(|(a, b)| 2.0 * (a - b) / nf).collect();
                self.backward(store, xm, xv, &cache, &gm, &gv, grads);
            }
            loss
        };
        let full_loss = |store: &ParamStore| (0..pairs).map(|p| pair_loss(store, p, None)).sum::<f64>() / pairs as f64;

        let mut history = vec![full_loss(store)];
        let mut adam = AdamState::new(store);
        let mut rng = component_rng(opts.seed, streams::SAN);
        let mut order: Vec<usize> = (0..pairs).collect();
        let batch = opts.batch_size.max(1);
        for _ in 0..opts.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(batch) {
                let mut grads = store.zero_grads();
                let mut loss = 0.0;
                for &p in chunk {
                    loss += pair_loss(store, p, Some(&mut grads));
                }
                if !loss.is_finite() {
                    return Err(Error::Numeric("statistics predictor loss became non-finite".into()));
                }
                grads.scale(1.0 / chunk.len() as f64);
                adam_step(store, &grads, &mut adam, opts.lr);
            }
            history.push(full_loss(store));
        }
        Ok(history)
    }
}

/// Stage-1 optimization settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SanFit {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SanFit {
    fn default() -> Self {
        SanFit { epochs: 10, lr: 1e-3, batch_size: 32, seed: 0 }
    }
}

/// A stand-alone predictor with its stage-1 loss history.
#[derive(Clone, Debug, PartialEq)]
pub struct SanState {
    pub store: ParamStore,
    pub net: SanNet,
    pub channels: usize,
    pub frozen: bool,
    pub history: Vec<f64>,
}

impl SanState {
    pub fn freeze(&mut self) {
        for id in self.net.param_ids() {
            self.store.set_trainable(id, false);
        }
        self.frozen = true;
    }
}

/// Stage 1: fit the statistics predictor on the training split.
pub fn san_stage1_train(data: &WindowedDataset, patch: usize, epochs: usize, seed: u64) -> Result<SanState> {
    let mut store = ParamStore::new();
    let net = SanNet::init(&mut store, data.lookback, data.horizon, patch, seed)?;
    let history = net.fit(&mut store, data, &SanFit { epochs, seed, ..SanFit::default() })?;
    Ok(SanState { store, net, channels: data.channels, frozen: false, history })
}

fn require_frozen(state: &SanState) -> Result<()> {
    if !state.frozen {
        return Err(Error::invalid("the statistics predictor must be frozen before stage 2"));
    }
    Ok(())
}

/// Patch-normalize a channel-major window and predict its target statistics.
pub fn san_normalize(x: &[f64], state: &SanState) -> Result<(Vec<f64>, SanStats)> {
    require_frozen(state)?;
    let (net, c) = (&state.net, state.channels);
    let l = net.in_patches * net.patch;
    if x.len() != l * c {
        return Err(Error::shape(format!("window has {} values, expected {c}x{l}", x.len())));
    }
    let n = net.out_patches;
    let mut out = vec![0.0; x.len()];
    let mut stats = SanStats { out_patches: n, mean: vec![0.0; n * c], var: vec![0.0; n * c] };
    for ch in 0..c {
        net.normalize_channel(
            &state.store,
            &x[ch * l..(ch + 1) * l],
            &mut out[ch * l..(ch + 1) * l],
            &mut stats.mean[ch * n..(ch + 1) * n],
            &mut stats.var[ch * n..(ch + 1) * n],
        );
    }
    Ok((out, stats))
}

/// Rescale a channel-major forecast with the predicted statistics.
pub fn san_denormalize(y: &[f64], state: &SanState, stats: &SanStats) -> Result<Vec<f64>> {
    require_frozen(state)?;
    let (net, c) = (&state.net, state.channels);
    let h = net.out_patches * net.patch;
    if y.len() != h * c || stats.mean.len() != net.out_patches * c {
        return Err(Error::shape("forecast does not match the predicted statistics"));
    }
    let n = net.out_patches;
    let mut out = vec![0.0; y.len()];
    for ch in 0..c {
        net.denormalize_channel(
            &y[ch * h..(ch + 1) * h],
            &stats.mean[ch * n..(ch + 1) * n],
            &stats.var[ch * n..(ch + 1) * n],
            &mut out[ch * h..(ch + 1) * h],
        );
    }
    Ok(out)
}
