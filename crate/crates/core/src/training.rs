//! Losses, Adam, and the end-to-end pipeline
//! `normalizer → (TIFO | FAN split) → backbone → denormalizer`.
//!
//! Every block is affine or element-wise, so gradients are composed from
//! hand-written vector-Jacobian products rather than a tape.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::baselines::fan::{split_into, FanCache, FanNet, DEFAULT_TOPK};
use crate::baselines::revin::normalize_channel;
use crate::baselines::san::{SanFit, SanNet, DEFAULT_PATCH};
use crate::data::{Split, WindowedDataset};
use crate::error::{Error, Result};
use crate::models::{Backbone, BackboneCache, BackboneKind, BackboneSpec, DEFAULT_KERNEL};
use crate::nn::{component_rng, streams, Grads, ParamId, ParamStore, Tensor};
use crate::spectral::{bin_count, RealDft, WindowFn};
use crate::stationarity::{
    correlation_scores, ema_refresh, entropy_scores, stability_scores, AmplitudePanel, ScoreMetric,
    StabilityScores, DEFAULT_EPSILON,
};
use crate::tifo::{alpha_scale, ChannelCache, FrequencyWeights, OperatorOptions, SpectralOperator, TifoNet, DEFAULT_HIDDEN};

/// Mean squared error over all elements.
pub fn mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64)
}

/// Mean absolute error over all elements.
pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(pred.iter().zip(target).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64)
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(format!("prediction has {} values, target {}", a.len(), b.len())));
    }
    Ok(())
}

/// Adam moments for every tensor of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.data.len()]).collect();
        AdamState { m: zeros.clone(), v: zeros, step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update of the trainable tensors. Returns `false`
/// and leaves everything untouched when a gradient is not finite.
pub fn adam_step(store: &mut ParamStore, grads: &Grads, state: &mut AdamState, lr: f64) -> bool {
    if !grads.all_finite() {
        return false;
    }
    state.step += 1;
    let t = state.step as f64;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powf(t);
    let c2 = 1.0 - b2.powf(t);
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        if !store.is_trainable(id) {
            continue;
        }
        let g = grads.get(id);
        let (m, v) = (&mut state.m[id.0], &mut state.v[id.0]);
        for (((p, gi), mi), vi) in store.get_mut(id).iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            *p -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
        }
    }
    true
}

/// Which wrapper surrounds the backbone.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Method {
    #[default]
    None,
    Revin,
    San,
    Fan,
    Tifo,
    TifoSan,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::None, Method::Revin, Method::San, Method::Fan, Method::Tifo, Method::TifoSan];

    pub fn name(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Revin => "revin",
            Method::San => "san",
            Method::Fan => "fan",
            Method::Tifo => "tifo",
            Method::TifoSan => "tifo+san",
        }
    }

    pub fn uses_tifo(self) -> bool {
        matches!(self, Method::Tifo | Method::TifoSan)
    }

    pub fn uses_san(self) -> bool {
        matches!(self, Method::San | Method::TifoSan)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}` (none, revin, san, fan, tifo, tifo+san)")))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Normalization applied around the frequency operator when `method = tifo`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum TifoNorm {
    Off,
    /// Parameter-free instance normalization of each input window, reversed
    /// on the forecast.
    #[default]
    Instance,
}

impl FromStr for TifoNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(TifoNorm::Off),
            "instance" => Ok(TifoNorm::Instance),
            other => Err(Error::Config(format!("unknown tifo_norm `{other}` (off, instance)"))),
        }
    }
}

impl fmt::Display for TifoNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TifoNorm::Off => "off",
            TifoNorm::Instance => "instance",
        })
    }
}

/// Model and optimization settings.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub backbone: BackboneKind,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Test-time interpolation of the learned weights toward identity.
    pub alpha: f64,
    /// Per-batch score refresh at evaluation.
    pub ema_decay: Option<f64>,
    pub hidden: usize,
    pub metric: ScoreMetric,
    pub score_epsilon: f64,
    pub window: WindowFn,
    pub keep: Option<usize>,
    pub tifo_norm: TifoNorm,
    pub individual: bool,
    pub kernel: usize,
    pub san_patch: usize,
    pub san_epochs: usize,
    pub fan_topk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::None,
            backbone: BackboneKind::DLinear,
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 30,
            patience: 5,
            seed: 0,
            alpha: 1.0,
            ema_decay: None,
            hidden: DEFAULT_HIDDEN,
            metric: ScoreMetric::MuSigma,
            score_epsilon: DEFAULT_EPSILON,
            window: WindowFn::Rectangular,
            keep: None,
            tifo_norm: TifoNorm::Instance,
            individual: true,
            kernel: DEFAULT_KERNEL,
            san_patch: DEFAULT_PATCH,
            san_epochs: 10,
            fan_topk: DEFAULT_TOPK,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return bad("batch_size, max_epochs and patience must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if let Some(d) = self.ema_decay {
            if !(d > 0.0 && d < 1.0) {
                return bad(format!("ema_decay must lie in (0, 1), got {d}"));
            }
        }
        if self.hidden == 0 || !(self.score_epsilon > 0.0) {
            return bad("hidden must be positive and score_epsilon > 0".into());
        }
        Ok(())
    }

    fn backbone_spec(&self, lookback: usize, horizon: usize, channels: usize) -> BackboneSpec {
        BackboneSpec { kind: self.backbone, lookback, horizon, channels, individual: self.individual, kernel: self.kernel }
    }
}

/// Fit stability scores on the training inputs.
pub fn fit_scores(ds: &WindowedDataset, metric: ScoreMetric, window: WindowFn, epsilon: f64) -> Result<StabilityScores> {
    let range = ds.split_range(Split::Train);
    let panel = AmplitudePanel::from_dataset(ds, range.clone(), window);
    match metric {
        ScoreMetric::MuSigma => stability_scores(&panel, epsilon),
        ScoreMetric::Entropy => entropy_scores(&panel),
        ScoreMetric::Correlation => {
            let means: Vec<f64> = range
                .flat_map(|i| (0..ds.channels).map(move |c| (i, c)))
                .map(|(i, c)| {
                    let t = ds.target(i, c);
                    t.iter().sum::<f64>() / t.len() as f64
                })
                .collect();
            correlation_scores(&panel, &means)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Norm {
    None,
    Instance,
    Revin { gamma: ParamId, beta: ParamId },
    San(SanNet),
}

/// A backbone with its wrappers and every parameter in one store.
#[derive(Clone, Debug, PartialEq)]
pub struct Pipeline {
    pub config: TrainConfig,
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
    pub store: ParamStore,
    pub backbone: Backbone,
    norm: Norm,
    tifo: Option<TifoNet>,
    fan: Option<FanNet>,
    pub scores: Option<StabilityScores>,
    pub trained: bool,
}

/// Per-epoch record of a training run. Epoch 0 is the untrained model.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub lr: f64,
    pub skipped_steps: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Stage-1 loss of the statistics predictor, when one was fitted.
    pub san_losses: Vec<f64>,
    pub best_epoch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

/// Buffers for one channel's forward and backward pass.
struct Scratch {
    op: Option<SpectralOperator>,
    dft: Option<RealDft>,
    dft_h: Option<RealDft>,
    u: Vec<f64>,
    v: Vec<f64>,
    filt: Vec<f64>,
    yhat: Vec<f64>,
    main: Vec<f64>,
    out: Vec<f64>,
    y_res: Vec<f64>,
    y_main: Vec<f64>,
    gy: Vec<f64>,
    g_main: Vec<f64>,
    gv: Vec<f64>,
    mu: f64,
    sd: f64,
    san_mu: Vec<f64>,
    san_var: Vec<f64>,
    op_cache: ChannelCache,
    bb_cache: BackboneCache,
    fan_cache: FanCache,
}

impl Pipeline {
    /// Fresh parameters for `ds`'s shapes. Scores for TIFO methods are fitted
    /// on the training split.
    pub fn new(config: TrainConfig, ds: &WindowedDataset) -> Result<Self> {
        let scores = if config.method.uses_tifo() {
            Some(fit_scores(ds, config.metric, config.window, config.score_epsilon)?)
        } else {
            None
        };
        Self::with_scores(config, ds.lookback, ds.horizon, ds.channels, scores)
    }

    /// Fresh parameters with explicit shapes and scores.
    pub fn with_scores(
        config: TrainConfig,
        lookback: usize,
        horizon: usize,
        channels: usize,
        scores: Option<StabilityScores>,
    ) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = component_rng(config.seed, streams::BACKBONE);
        let backbone = Backbone::init(&mut store, config.backbone_spec(lookback, horizon, channels), &mut rng)?;
        let norm = match config.method {
            Method::Revin => Norm::Revin {
                gamma: store.add("revin.gamma", Tensor { shape: vec![channels], data: vec![1.0; channels] }),
                beta: store.add("revin.beta", Tensor { shape: vec![channels], data: vec![0.0; channels] }),
            },
            Method::San | Method::TifoSan => {
                Norm::San(SanNet::init(&mut store, lookback, horizon, config.san_patch, config.seed)?)
            }
            Method::Tifo if config.tifo_norm == TifoNorm::Instance => Norm::Instance,
            _ => Norm::None,
        };
        let tifo = if config.method.uses_tifo() {
            let mut rng = component_rng(config.seed, streams::TIFO);
            Some(TifoNet::init(&mut store, bin_count(lookback), config.hidden, &mut rng))
        } else {
            None
        };
        let fan = if config.method == Method::Fan {
            Some(FanNet::init(&mut store, lookback, horizon, channels, config.fan_topk, config.seed)?)
        } else {
            None
        };
        let mut p = Pipeline { config, lookback, horizon, channels, store, backbone, norm, tifo, fan, scores, trained: false };
        p.check_scores()?;
        p.freeze_san(true);
        Ok(p)
    }

    /// Rebuild a pipeline around loaded parameters.
    pub fn bind(
        config: TrainConfig,
        lookback: usize,
        horizon: usize,
        channels: usize,
        store: ParamStore,
        scores: Option<StabilityScores>,
    ) -> Result<Self> {
        config.validate()?;
        let backbone = Backbone::bind(&store, config.backbone_spec(lookback, horizon, channels))?;
        let get = |n: &str, len: usize| -> Result<ParamId> {
            let id = store.find(n).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{n}`")))?;
            if store.tensor(id).shape != [len] {
                return Err(Error::Checkpoint(format!("tensor `{n}` has shape {:?}, expected [{len}]", store.tensor(id).shape)));
            }
            Ok(id)
        };
        let norm = match config.method {
            Method::Revin => Norm::Revin { gamma: get("revin.gamma", channels)?, beta: get("revin.beta", channels)? },
            Method::San | Method::TifoSan => Norm::San(SanNet::bind(&store, lookback, horizon, config.san_patch)?),
            Method::Tifo if config.tifo_norm == TifoNorm::Instance => Norm::Instance,
            _ => Norm::None,
        };
        let tifo = if config.method.uses_tifo() {
            let net = TifoNet::bind(&store)?;
            if net.bins != bin_count(lookback) {
                return Err(Error::Checkpoint(format!(
                    "tensor `mlp_r.w1` expects {} bins, lookback {lookback} has {}",
                    net.bins,
                    bin_count(lookback)
                )));
            }
            Some(net)
        } else {
            None
        };
        let fan = if config.method == Method::Fan {
            Some(FanNet::bind(&store, lookback, horizon, channels, config.fan_topk)?)
        } else {
            None
        };
        let mut p = Pipeline { config, lookback, horizon, channels, store, backbone, norm, tifo, fan, scores, trained: true };
        p.check_scores()?;
        p.freeze_san(true);
        Ok(p)
    }

    fn check_scores(&self) -> Result<()> {
        if self.tifo.is_some() {
            let s = self.scores.as_ref().ok_or_else(|| Error::invalid("frequency operator needs stability scores"))?;
            if s.bins() != bin_count(self.lookback) || s.channels() != self.channels {
                return Err(Error::shape(format!(
                    "scores are {}x{}, expected {}x{}",
                    s.bins(),
                    s.channels(),
                    bin_count(self.lookback),
                    self.channels
                )));
            }
        }
        Ok(())
    }

    /// The statistics predictor only trains during its own stage.
    fn freeze_san(&mut self, frozen: bool) {
        if let Norm::San(net) = self.norm {
            for id in net.param_ids() {
                self.store.set_trainable(id, !frozen);
            }
        }
    }

    pub fn method(&self) -> Method {
        self.config.method
    }

    /// Whether the backbone sees something other than the raw window.
    pub fn has_input_transform(&self) -> bool {
        self.config.method != Method::None
    }

    /// The same trained pipeline with the frequency operator removed: the
    /// normalizer and backbone alone.
    pub fn without_operator(&self) -> Pipeline {
        let mut p = self.clone();
        p.tifo = None;
        p.scores = None;
        p
    }

    fn check_dataset(&self, ds: &WindowedDataset) -> Result<()> {
        if ds.lookback != self.lookback || ds.horizon != self.horizon || ds.channels != self.channels {
            return Err(Error::shape(format!(
                "dataset is L={} H={} C={}, pipeline expects L={} H={} C={}",
                ds.lookback, ds.horizon, ds.channels, self.lookback, self.horizon, self.channels
            )));
        }
        Ok(())
    }

    fn scratch(&self) -> Result<Scratch> {
        let (l, h) = (self.lookback, self.horizon);
        let op = match self.tifo {
            Some(_) => Some(SpectralOperator::new(l, OperatorOptions { window: self.config.window, keep: self.config.keep })?),
            None => None,
        };
        let n_out = match &self.norm {
            Norm::San(net) => net.out_patches,
            _ => 0,
        };
        Ok(Scratch {
            op,
            dft: self.fan.map(|_| RealDft::new(l)),
            dft_h: self.fan.map(|_| RealDft::new(h)),
            u: vec![0.0; l],
            v: vec![0.0; l],
            filt: vec![0.0; l],
            yhat: vec![0.0; h],
            main: vec![0.0; h],
            out: vec![0.0; h],
            y_res: vec![0.0; h],
            y_main: vec![0.0; h],
            gy: vec![0.0; h],
            g_main: vec![0.0; h],
            gv: vec![0.0; l],
            mu: 0.0,
            sd: 1.0,
            san_mu: vec![0.0; n_out],
            san_var: vec![0.0; n_out],
            op_cache: ChannelCache::default(),
            bb_cache: BackboneCache::default(),
            fan_cache: FanCache::default(),
        })
    }

    /// Normalize and (optionally) re-weight one channel into `s.v`.
    fn input_stage(&self, s: &mut Scratch, x: &[f64], lam: Option<(&[f64], &[f64])>, keep_cache: bool) {
        match &self.norm {
            Norm::None => s.u.copy_from_slice(x),
            Norm::Instance | Norm::Revin { .. } => {
                let (m, sd) = normalize_channel(x, &mut s.u);
                s.mu = m;
                s.sd = sd;
            }
            Norm::San(net) => net.normalize_channel(&self.store, x, &mut s.u, &mut s.san_mu, &mut s.san_var),
        }
        if let Some(fan) = &self.fan {
            let dft = s.dft.as_mut().expect("fan scratch");
            split_into(dft, &s.u, fan.topk, &mut s.v, &mut s.filt);
        } else if let (Some(op), Some((lr, li))) = (s.op.as_mut(), lam) {
            let cache = if keep_cache { Some(&mut s.op_cache) } else { None };
            op.apply(&s.u, lr, li, &mut s.v, cache);
        } else {
            s.v.copy_from_slice(&s.u);
        }
    }

    /// Full forward pass of channel `c`; the forecast ends up in `s.out`.
    fn forward_channel(&self, s: &mut Scratch, x: &[f64], c: usize, lam: Option<(&[f64], &[f64])>, keep_cache: bool) {
        self.input_stage(s, x, lam, keep_cache);
        let cache = if keep_cache { Some(&mut s.bb_cache) } else { None };
        self.backbone.forward_channel(&self.store, c, &s.v, &mut s.yhat, cache);
        if let Some(fan) = &self.fan {
            let cache = if keep_cache { Some(&mut s.fan_cache) } else { None };
            fan.main_forward(&self.store, &s.filt, &s.u, &mut s.main, cache);
            let (w0, w1) = fan.weights(&self.store, c);
            for t in 0..self.horizon {
                s.out[t] = w0 * s.yhat[t] + w1 * s.main[t];
            }
            return;
        }
        match &self.norm {
            Norm::None => s.out.copy_from_slice(&s.yhat),
            Norm::Instance => {
                for t in 0..self.horizon {
                    s.out[t] = s.yhat[t] * s.sd + s.mu;
                }
            }
            Norm::Revin { gamma, beta } => {
                let (g, b) = (self.store.get(*gamma)[c], self.store.get(*beta)[c]);
                for t in 0..self.horizon {
                    s.out[t] = g * (s.yhat[t] * s.sd + s.mu) + b;
                }
            }
            Norm::San(net) => net.denormalize_channel(&s.yhat, &s.san_mu, &s.san_var, &mut s.out),
        }
    }

    /// Sum of squared errors of the training objective for one channel
    /// (decomposed targets for FAN, plain forecast error otherwise), after
    /// [`Pipeline::forward_channel`].
    fn objective_channel(&self, s: &mut Scratch, y: &[f64], c: usize) -> f64 {
        match &self.fan {
            Some(fan) => {
                let dft = s.dft_h.as_mut().expect("fan scratch");
                split_into(dft, y, fan.topk, &mut s.y_res, &mut s.y_main);
                let (w0, w1) = fan.weights(&self.store, c);
                let mut acc = 0.0;
                for t in 0..self.horizon {
                    let a = w1 * s.main[t] - s.y_main[t];
                    let b = w0 * s.yhat[t] - s.y_res[t];
                    acc += a * a + b * b;
                }
                acc
            }
            None => s.out.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum(),
        }
    }

    /// Backward pass of `scale · objective_channel` after a cached forward.
    fn backward_channel(
        &self,
        s: &mut Scratch,
        c: usize,
        y: &[f64],
        scale: f64,
        lam: Option<(&[f64], &[f64])>,
        grads: &mut Grads,
        g_lam: Option<(&mut [f64], &mut [f64])>,
    ) {
        let h = self.horizon;
        if let Some(fan) = &self.fan {
            let (w0, w1) = fan.weights(&self.store, c);
            let (mut gw0, mut gw1) = (0.0, 0.0);
            for t in 0..h {
                let a = 2.0 * scale * (w1 * s.main[t] - s.y_main[t]);
                let b = 2.0 * scale * (w0 * s.yhat[t] - s.y_res[t]);
                s.g_main[t] = a * w1;
                s.gy[t] = b * w0;
                gw1 += a * s.main[t];
                gw0 += b * s.yhat[t];
            }
            {
                let gw = grads.get_mut(fan.combine);
                gw[c] += gw0;
                gw[self.channels + c] += gw1;
            }
            fan.main_backward(&self.store, &s.filt, &s.fan_cache, &s.g_main, grads);
        } else {
            for t in 0..h {
                s.gy[t] = 2.0 * scale * (s.out[t] - y[t]);
            }
            match &self.norm {
                Norm::None => {}
                Norm::Instance => s.gy.iter_mut().for_each(|g| *g *= s.sd),
                Norm::Revin { gamma, beta } => {
                    let g = self.store.get(*gamma)[c];
                    let (mut gg, mut gb) = (0.0, 0.0);
                    for t in 0..h {
                        gg += s.gy[t] * (s.yhat[t] * s.sd + s.mu);
                        gb += s.gy[t];
                        s.gy[t] *= g * s.sd;
                    }
                    grads.get_mut(*gamma)[c] += gg;
                    grads.get_mut(*beta)[c] += gb;
                }
                Norm::San(net) => {
                    let p = net.patch;
                    for (j, chunk) in s.gy.chunks_exact_mut(p).enumerate() {
                        let sd = (s.san_var[j] + crate::baselines::san::SAN_EPSILON).sqrt();
                        chunk.iter_mut().for_each(|g| *g *= sd);
                    }
                }
            }
        }
        let need_gx = g_lam.is_some();
        let gv = if need_gx { Some(&mut s.gv[..]) } else { None };
        self.backbone.backward_channel(&self.store, c, &s.v, &s.bb_cache, &s.gy, grads, gv);
        if let (Some((glr, gli)), Some(op), Some((lr, li))) = (g_lam, s.op.as_mut(), lam) {
            op.vjp(&s.op_cache, lr, li, &s.gv, glr, gli, None);
        }
    }

    /// Frequency weights from the given scores, alpha-scaled.
    fn lambda(&self, scores: &StabilityScores, alpha: f64) -> Result<Option<FrequencyWeights>> {
        match &self.tifo {
            Some(net) => {
                let (w, _) = net.forward(&self.store, scores)?;
                Ok(Some(if alpha == 1.0 { w } else { alpha_scale(&w, alpha)? }))
            }
            None => Ok(None),
        }
    }

    /// The learned frequency weights with the configured alpha.
    pub fn frequency_weights(&self) -> Result<Option<FrequencyWeights>> {
        match &self.scores {
            Some(s) => self.lambda(s, self.config.alpha),
            None => Ok(None),
        }
    }

    /// Training objective (mean over samples, channels and horizon) and its
    /// gradient on the windows `idx`.
    pub fn loss_and_grads(&self, ds: &WindowedDataset, idx: &[usize]) -> Result<(f64, Grads)> {
        self.check_dataset(ds)?;
        let mut grads = self.store.zero_grads();
        let loss = self.accumulate(ds, idx, &mut grads)?;
        Ok((loss, grads))
    }

    fn accumulate(&self, ds: &WindowedDataset, idx: &[usize], grads: &mut Grads) -> Result<f64> {
        let mut s = self.scratch()?;
        let scale = 1.0 / (idx.len() * self.channels * self.horizon) as f64;
        let tifo_state = match (&self.tifo, &self.scores) {
            (Some(net), Some(scores)) => Some((net, scores, net.forward(&self.store, scores)?)),
            _ => None,
        };
        let k = bin_count(self.lookback);
        let mut g_lam = tifo_state.as_ref().map(|_| FrequencyWeights {
            bins: k,
            channels: self.channels,
            re: vec![0.0; k * self.channels],
            im: vec![0.0; k * self.channels],
        });
        let mut total = 0.0;
        for &i in idx {
            for c in 0..self.channels {
                let lam = tifo_state.as_ref().map(|(_, _, (w, _))| w.channel(c));
                self.forward_channel(&mut s, ds.input(i, c), c, lam, true);
                let y = ds.target(i, c);
                total += self.objective_channel(&mut s, y, c);
                let gl = g_lam.as_mut().map(|g| {
                    let r = c * k..(c + 1) * k;
                    let (re, im) = (&mut g.re[r.clone()], &mut g.im[r]);
                    (re, im)
                });
                self.backward_channel(&mut s, c, y, scale, lam, grads, gl);
            }
        }
        if let (Some((net, scores, (_, cache))), Some(g)) = (&tifo_state, &g_lam) {
            net.backward(&self.store, scores, cache, g, grads);
        }
        Ok(total * scale)
    }

    /// Training objective on `idx` without gradients.
    pub fn loss(&self, ds: &WindowedDataset, idx: &[usize]) -> Result<f64> {
        let mut s = self.scratch()?;
        let w = match &self.scores {
            Some(sc) => self.lambda(sc, 1.0)?,
            None => None,
        };
        let mut total = 0.0;
        for &i in idx {
            for c in 0..self.channels {
                let lam = w.as_ref().map(|w| w.channel(c));
                self.forward_channel(&mut s, ds.input(i, c), c, lam, false);
                total += self.objective_channel(&mut s, ds.target(i, c), c);
            }
        }
        Ok(total / (idx.len() * self.channels * self.horizon) as f64)
    }

    /// Channel-major forecast of one window.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (l, h) = (self.lookback, self.horizon);
        if x.len() != l * self.channels {
            return Err(Error::shape(format!("window has {} values, expected {}x{l}", x.len(), self.channels)));
        }
        let w = self.frequency_weights()?;
        let mut s = self.scratch()?;
        let mut out = vec![0.0; h * self.channels];
        for c in 0..self.channels {
            let lam = w.as_ref().map(|w| w.channel(c));
            self.forward_channel(&mut s, &x[c * l..(c + 1) * l], c, lam, false);
            out[c * h..(c + 1) * h].copy_from_slice(&s.out);
        }
        Ok(out)
    }

    /// What the backbone sees for one channel, or `None` when the method has
    /// no input transform. Uses the given weights for TIFO methods.
    pub fn transform_input(&self, x: &[f64], c: usize, weights: Option<&FrequencyWeights>) -> Result<Option<Vec<f64>>> {
        if !self.has_input_transform() {
            return Ok(None);
        }
        if x.len() != self.lookback || c >= self.channels {
            return Err(Error::shape("window or channel out of range"));
        }
        let mut s = self.scratch()?;
        let lam = weights.map(|w| w.channel(c));
        if self.tifo.is_some() && lam.is_none() {
            return Err(Error::invalid("frequency operator needs weights"));
        }
        self.input_stage(&mut s, x, lam, false);
        Ok(Some(s.v))
    }

    /// MSE and MAE of the forecast over windows `range`.
    fn metrics(&self, ds: &WindowedDataset, range: std::ops::Range<usize>, alpha: f64, ema: Option<f64>) -> Result<Metrics> {
        if range.is_empty() {
            return Err(Error::Data("cannot evaluate an empty split".into()));
        }
        let mut s = self.scratch()?;
        let mut scores = self.scores.clone();
        let mut w = match &scores {
            Some(sc) => self.lambda(sc, alpha)?,
            None => None,
        };
        let (mut se, mut ae) = (0.0, 0.0);
        let idx: Vec<usize> = range.collect();
        for batch in idx.chunks(self.config.batch_size) {
            if let (Some(decay), Some(sc)) = (ema, scores.as_mut()) {
                // Batches of one window carry no dispersion; they keep the current scores.
                if batch.len() >= 2 {
                    let panel = AmplitudePanel::from_fn(batch.len(), self.channels, self.lookback, self.config.window, |i, c, buf| {
                        buf.copy_from_slice(ds.input(batch[i], c))
                    });
                    *sc = ema_refresh(sc, &panel, decay)?;
                    w = self.lambda(sc, alpha)?;
                }
            }
            for &i in batch {
                for c in 0..self.channels {
                    let lam = w.as_ref().map(|w| w.channel(c));
                    self.forward_channel(&mut s, ds.input(i, c), c, lam, false);
                    for (a, b) in s.out.iter().zip(ds.target(i, c)) {
                        se += (a - b) * (a - b);
                        ae += (a - b).abs();
                    }
                }
            }
        }
        let n = (idx.len() * self.channels * self.horizon) as f64;
        Ok(Metrics { mse: se / n, mae: ae / n })
    }

    fn snapshot(&self) -> Vec<Vec<f64>> {
        self.store.ids().map(|id| self.store.get(id).to_vec()).collect()
    }

    fn restore(&mut self, snap: &[Vec<f64>]) {
        let ids: Vec<ParamId> = self.store.ids().collect();
        for (id, v) in ids.into_iter().zip(snap) {
            self.store.get_mut(id).copy_from_slice(v);
        }
    }
}

/// Train a pipeline on the training split with early stopping on the
/// validation split; the parameters of the best validation epoch are kept.
pub fn train(config: &TrainConfig, ds: &WindowedDataset) -> Result<(Pipeline, History)> {
    let mut p = Pipeline::new(config.clone(), ds)?;
    let history = train_pipeline(&mut p, ds)?;
    Ok((p, history))
}

/// Train an already constructed pipeline in place.
pub fn train_pipeline(p: &mut Pipeline, ds: &WindowedDataset) -> Result<History> {
    p.check_dataset(ds)?;
    let cfg = p.config.clone();
    let train_range = ds.split_range(Split::Train);
    let val_range = ds.split_range(Split::Val);
    if train_range.is_empty() || val_range.is_empty() {
        return Err(Error::Data("training needs non-empty train and validation splits".into()));
    }
    let mut history = History::default();
    if let Norm::San(net) = p.norm {
        let fit = SanFit { epochs: cfg.san_epochs, lr: cfg.lr, batch_size: cfg.batch_size, seed: cfg.seed };
        p.freeze_san(false);
        history.san_losses = net.fit(&mut p.store, ds, &fit)?;
        p.freeze_san(true);
    }
    let train_idx: Vec<usize> = train_range.clone().collect();
    let val0 = p.metrics(ds, val_range.clone(), 1.0, None)?.mse;
    let train0 = p.loss(ds, &train_idx)?;
    history.epochs.push(EpochRecord { epoch: 0, train_mse: train0, val_mse: val0, lr: cfg.lr, skipped_steps: 0 });
    let mut best = (val0, 0usize, p.snapshot());
    let mut best_trained = f64::INFINITY;
    let mut bad = 0;

    let mut adam = AdamState::new(&p.store);
    let mut rng = component_rng(cfg.seed, streams::SHUFFLE);
    let mut order = train_idx.clone();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut count, mut skipped) = (0.0, 0usize, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = p.store.zero_grads();
            let loss = p.accumulate(ds, batch, &mut grads)?;
            if loss.is_nan() {
                return Err(Error::Numeric(format!("loss is NaN at epoch {epoch}, batch {b}")));
            }
            if adam_step(&mut p.store, &grads, &mut adam, cfg.lr) {
                sum += loss * batch.len() as f64;
                count += batch.len();
            } else {
                skipped += 1;
            }
        }
        let train_mse = if count > 0 { sum / count as f64 } else { f64::NAN };
        let val = p.metrics(ds, val_range.clone(), 1.0, None)?.mse;
        if val.is_nan() {
            return Err(Error::Numeric(format!("validation loss is NaN after epoch {epoch}")));
        }
        history.epochs.push(EpochRecord { epoch, train_mse, val_mse: val, lr: cfg.lr, skipped_steps: skipped });
        if val < best.0 {
            best = (val, epoch, p.snapshot());
        }
        if val < best_trained {
            best_trained = val;
            bad = 0;
        } else {
            bad += 1;
            if bad >= cfg.patience {
                break;
            }
        }
    }
    p.restore(&best.2);
    history.best_epoch = best.1;
    p.trained = true;
    Ok(history)
}

/// Forecast metrics on a split. `alpha` overrides the configured weight
/// scaling; `ema_decay` refreshes the scores batch by batch.
pub fn evaluate(p: &Pipeline, ds: &WindowedDataset, split: Split, alpha: Option<f64>, ema_decay: Option<f64>) -> Result<Metrics> {
    if !p.trained {
        return Err(Error::invalid("pipeline has not been trained"));
    }
    p.check_dataset(ds)?;
    let alpha = alpha.unwrap_or(p.config.alpha);
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if let Some(d) = ema_decay {
        if !(d > 0.0 && d < 1.0) {
            return Err(Error::invalid(format!("ema decay must lie in (0, 1), got {d}")));
        }
    }
    p.metrics(ds, ds.split_range(split), alpha, ema_decay)
}

/// Largest disagreement between analytic gradients and central differences
/// over every trainable parameter. Entries whose absolute difference is
/// at most 1e-9 (finite-difference noise) count as exact; others are compared relative to the larger
/// magnitude.
pub fn finite_diff_check(p: &Pipeline, ds: &WindowedDataset, idx: &[usize], step: f64) -> Result<f64> {
    let (_, grads) = p.loss_and_grads(ds, idx)?;
    let mut probe = p.clone();
    let mut worst: f64 = 0.0;
    let ids: Vec<ParamId> = p.store.ids().collect();
    for id in ids {
        if !p.store.is_trainable(id) {
            continue;
        }
        for j in 0..p.store.get(id).len() {
            let orig = p.store.get(id)[j];
            probe.store.get_mut(id)[j] = orig + step;
            let up = probe.loss(ds, idx)?;
            probe.store.get_mut(id)[j] = orig - step;
            let down = probe.loss(ds, idx)?;
            probe.store.get_mut(id)[j] = orig;
            let numeric = (up - down) / (2.0 * step);
            let analytic = grads.get(id)[j];
            let diff = (numeric - analytic).abs();
            if diff > 1e-9 {
                worst = worst.max(diff / numeric.abs().max(analytic.abs()));
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 2.5);
        assert_eq!(mae(&[1.0, 2.0], &[0.0, 0.0]).unwrap(), 1.5);
        assert!((mse(&[3.0, 6.0], &[0.0, 0.0]).unwrap() - 9.0 * 2.5).abs() < 1e-12);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mae(&[], &[]).is_err());
    }

    fn store_with(values: Vec<f64>) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let n = values.len();
        let id = s.add("p", Tensor { shape: vec![n], data: values });
        (s, id)
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let (mut s, id) = store_with(vec![0.5, -1.0]);
        let mut st = AdamState::new(&s);
        let g = s.zero_grads();
        assert!(adam_step(&mut s, &g, &mut st, 1e-3));
        assert_eq!(s.get(id), &[0.5, -1.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let (mut s, id) = store_with(vec![0.0, 0.0, 0.0]);
        let mut st = AdamState::new(&s);
        let mut g = s.zero_grads();
        g.get_mut(id).copy_from_slice(&[3.0, -0.01, 250.0]);
        adam_step(&mut s, &g, &mut st, 1e-2);
        let p = s.get(id);
        assert!((p[0] + 1e-2).abs() < 1e-8 && (p[1] - 1e-2).abs() < 1e-7 && (p[2] + 1e-2).abs() < 1e-8);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let (mut s, id) = store_with(vec![1.0]);
        let mut st = AdamState::new(&s);
        let mut g = s.zero_grads();
        g.get_mut(id)[0] = f64::NAN;
        assert!(!adam_step(&mut s, &g, &mut st, 1e-2));
        assert_eq!(s.get(id), &[1.0]);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("dish-ts".parse::<Method>().is_err());
    }
}
