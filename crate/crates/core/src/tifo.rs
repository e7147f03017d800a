//! Learnable frequency re-weighting.
//!
//! Two small networks map a channel's stability scores to per-bin weights
//! for the real and the imaginary DFT coefficients. Each window is
//! transformed, re-weighted bin by bin and brought back to the time domain
//! before the backbone sees it. The networks are shared by all channels.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{component_rng, relu, streams, Dense, Grads, ParamStore};
use crate::spectral::{bin_count, RealDft, WindowFn};
use crate::stationarity::StabilityScores;

pub const DEFAULT_HIDDEN: usize = 128;

/// Per-bin, per-channel weights for the real and imaginary planes,
/// stored channel-major (`[c * K + k]`).
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyWeights {
    pub bins: usize,
    pub channels: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl FrequencyWeights {
    pub fn ones(bins: usize, channels: usize) -> Self {
        let n = bins * channels;
        FrequencyWeights { bins, channels, re: vec![1.0; n], im: vec![1.0; n] }
    }

    pub fn channel(&self, c: usize) -> (&[f64], &[f64]) {
        let r = c * self.bins..(c + 1) * self.bins;
        (&self.re[r.clone()], &self.im[r])
    }
}

/// Interpolate the weights toward the identity operator:
/// `λ_eff = (1 − α) + α·λ`. `α = 0` switches the operator off.
pub fn alpha_scale(w: &FrequencyWeights, alpha: f64) -> Result<FrequencyWeights> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let f = |v: &f64| (1.0 - alpha) + alpha * v;
    Ok(FrequencyWeights {
        bins: w.bins,
        channels: w.channels,
        re: w.re.iter().map(f).collect(),
        im: w.im.iter().map(f).collect(),
    })
}

/// Parameter handles of the two weight networks inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TifoNet {
    pub real_in: Dense,
    pub real_out: Dense,
    pub imag_in: Dense,
    pub imag_out: Dense,
    pub bins: usize,
    pub hidden: usize,
}

/// Hidden activations kept from [`TifoNet::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct TifoCache {
    hidden_re: Vec<f64>,
    hidden_im: Vec<f64>,
}

impl TifoNet {
    /// Glorot-uniform hidden layers. The output layers start with zero
    /// weights and unit bias, so a fresh layer is exactly the identity.
    pub fn init(store: &mut ParamStore, bins: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let real_in = Dense::init_named(store, "mlp_r.w1", "mlp_r.b1", bins, hidden, rng, 0.0);
        let real_out = Dense::init_named(store, "mlp_r.w2", "mlp_r.b2", hidden, bins, rng, 1.0);
        let imag_in = Dense::init_named(store, "mlp_i.w1", "mlp_i.b1", bins, hidden, rng, 0.0);
        let imag_out = Dense::init_named(store, "mlp_i.w2", "mlp_i.b2", hidden, bins, rng, 1.0);
        store.get_mut(real_out.w).fill(0.0);
        store.get_mut(imag_out.w).fill(0.0);
        TifoNet { real_in, real_out, imag_in, imag_out, bins, hidden }
    }

    /// Look the network up by tensor name in a loaded store.
    pub fn bind(store: &ParamStore) -> Result<Self> {
        let get = |name: &str| {
            store
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
        };
        let dense = |w: &str, b: &str| -> Result<Dense> {
            let w = get(w)?;
            let b = get(b)?;
            let shape = &store.tensor(w).shape;
            if shape.len() != 2 || store.tensor(b).shape != [shape[0]] {
                return Err(Error::Checkpoint(format!("tensor `{}` has a bad shape", store.name(w))));
            }
            Ok(Dense { w, b, inp: shape[1], out: shape[0] })
        };
        let real_in = dense("mlp_r.w1", "mlp_r.b1")?;
        let real_out = dense("mlp_r.w2", "mlp_r.b2")?;
        let imag_in = dense("mlp_i.w1", "mlp_i.b1")?;
        let imag_out = dense("mlp_i.w2", "mlp_i.b2")?;
        let bins = real_in.inp;
        let hidden = real_in.out;
        for d in [&real_out, &imag_in, &imag_out] {
            if d.inp.max(d.out) != bins.max(hidden) || d.inp.min(d.out) != bins.min(hidden) {
                return Err(Error::Checkpoint("weight networks disagree in shape".into()));
            }
        }
        Ok(TifoNet { real_in, real_out, imag_in, imag_out, bins, hidden })
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        scores: &StabilityScores,
    ) -> Result<(FrequencyWeights, TifoCache)> {
        if scores.bins() != self.bins {
            return Err(Error::shape(format!(
                "scores have {} bins, weight network expects {}",
                scores.bins(),
                self.bins
            )));
        }
        let (k, h, cc) = (self.bins, self.hidden, scores.channels());
        let mut w = FrequencyWeights { bins: k, channels: cc, re: vec![0.0; k * cc], im: vec![0.0; k * cc] };
        let mut cache = TifoCache { hidden_re: vec![0.0; h * cc], hidden_im: vec![0.0; h * cc] };
        for c in 0..cc {
            let s = scores.channel(c);
            let hr = &mut cache.hidden_re[c * h..(c + 1) * h];
            self.real_in.forward(store, s, hr);
            hr.iter_mut().for_each(|v| *v = relu(*v));
            self.real_out.forward(store, hr, &mut w.re[c * k..(c + 1) * k]);

            let hi = &mut cache.hidden_im[c * h..(c + 1) * h];
            self.imag_in.forward(store, s, hi);
            hi.iter_mut().for_each(|v| *v = relu(*v));
            self.imag_out.forward(store, hi, &mut w.im[c * k..(c + 1) * k]);
        }
        Ok((w, cache))
    }

    /// Accumulate network gradients from weight cotangents.
    pub fn backward(
        &self,
        store: &ParamStore,
        scores: &StabilityScores,
        cache: &TifoCache,
        grad: &FrequencyWeights,
        grads: &mut Grads,
    ) {
        let (k, h) = (self.bins, self.hidden);
        let mut gh = vec![0.0; h];
        let planes = [
            (&self.real_in, &self.real_out, &cache.hidden_re, &grad.re),
            (&self.imag_in, &self.imag_out, &cache.hidden_im, &grad.im),
        ];
        for (l1, l2, hidden, g) in planes {
            for c in 0..grad.channels {
                let hc = &hidden[c * h..(c + 1) * h];
                l2.backward(store, hc, &g[c * k..(c + 1) * k], grads, Some(&mut gh));
                for (gv, hv) in gh.iter_mut().zip(hc) {
                    if *hv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                l1.backward(store, scores.channel(c), &gh, grads, None);
            }
        }
    }

    pub fn param_ids(&self) -> [crate::nn::ParamId; 8] {
        [
            self.real_in.w,
            self.real_in.b,
            self.real_out.w,
            self.real_out.b,
            self.imag_in.w,
            self.imag_in.b,
            self.imag_out.w,
            self.imag_out.b,
        ]
    }
}

/// Stand-alone weight networks with their own parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct TifoParams {
    pub store: ParamStore,
    pub net: TifoNet,
    pub seed: u64,
}

/// Fresh weight networks for `bins` frequency bins. The networks are shared
/// across channels, so `channels` only has to be positive.
pub fn init_tifo(bins: usize, channels: usize, hidden: usize, seed: u64) -> Result<TifoParams> {
    if bins == 0 || channels == 0 || hidden == 0 {
        return Err(Error::invalid("bins, channels and hidden width must all be positive"));
    }
    let mut store = ParamStore::new();
    let mut rng = component_rng(seed, streams::TIFO);
    let net = TifoNet::init(&mut store, bins, hidden, &mut rng);
    Ok(TifoParams { store, net, seed })
}

/// `λ_r = MLP_r(S)`, `λ_i = MLP_i(S)`, channel by channel.
pub fn weights(params: &TifoParams, scores: &StabilityScores) -> Result<FrequencyWeights> {
    params.net.forward(&params.store, scores).map(|(w, _)| w)
}

/// Optional taper and bin truncation wrapped around the re-weighting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OperatorOptions {
    pub window: WindowFn,
    /// Keep only bins `< keep`; `None` keeps the full spectrum.
    pub keep: Option<usize>,
}

/// Per-channel values the backward pass needs.
#[derive(Clone, Debug, Default)]
pub struct ChannelCache {
    re: Vec<f64>,
    im: Vec<f64>,
}

/// Re-weights one channel at a time; owns the DFT plan and scratch space.
pub struct SpectralOperator {
    len: usize,
    bins: usize,
    dft: RealDft,
    taps: Option<Vec<f64>>,
    keep: usize,
    scratch_x: Vec<f64>,
    wre: Vec<f64>,
    wim: Vec<f64>,
}

impl SpectralOperator {
    pub fn new(len: usize, options: OperatorOptions) -> Result<Self> {
        if len < 2 {
            return Err(Error::invalid(format!("series length {len} < 2")));
        }
        let bins = bin_count(len);
        let keep = options.keep.unwrap_or(bins);
        if keep == 0 || keep > bins {
            return Err(Error::invalid(format!("keep = {keep} outside 1..={bins}")));
        }
        let taps = match options.window {
            WindowFn::Rectangular => None,
            w => Some(w.taps(len)),
        };
        Ok(SpectralOperator {
            len,
            bins,
            dft: RealDft::new(len),
            taps,
            keep,
            scratch_x: vec![0.0; len],
            wre: vec![0.0; bins],
            wim: vec![0.0; bins],
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// `out = iDFT(R ⊙ λ_r + i·I ⊙ λ_i)` for one channel.
    pub fn apply(
        &mut self,
        x: &[f64],
        lam_re: &[f64],
        lam_im: &[f64],
        out: &mut [f64],
        cache: Option<&mut ChannelCache>,
    ) {
        let input: &[f64] = match &self.taps {
            Some(t) => {
                for ((s, a), b) in self.scratch_x.iter_mut().zip(x).zip(t) {
                    *s = a * b;
                }
                &self.scratch_x
            }
            None => x,
        };
        let (k, keep) = (self.bins, self.keep);
        let mut re = vec![0.0; k];
        let mut im = vec![0.0; k];
        self.dft.forward_into(input, &mut re, &mut im);
        for i in 0..k {
            if i < keep {
                self.wre[i] = re[i] * lam_re[i];
                self.wim[i] = im[i] * lam_im[i];
            } else {
                self.wre[i] = 0.0;
                self.wim[i] = 0.0;
            }
        }
        self.dft.inverse_into(&self.wre, &self.wim, out);
        if let Some(c) = cache {
            c.re = re;
            c.im = im;
        }
    }

    /// Backward pass of [`SpectralOperator::apply`]. Adds into `g_lam_*` and,
    /// when given, overwrites `g_x` with the input cotangent.
    #[allow(clippy::too_many_arguments)]
    pub fn vjp(
        &mut self,
        cache: &ChannelCache,
        lam_re: &[f64],
        lam_im: &[f64],
        upstream: &[f64],
        g_lam_re: &mut [f64],
        g_lam_im: &mut [f64],
        g_x: Option<&mut [f64]>,
    ) {
        let (k, keep) = (self.bins, self.keep);
        let mut gre = vec![0.0; k];
        let mut gim = vec![0.0; k];
        self.dft.inverse_adjoint(upstream, &mut gre, &mut gim);
        for i in keep..k {
            gre[i] = 0.0;
            gim[i] = 0.0;
        }
        for i in 0..keep {
            g_lam_re[i] += gre[i] * cache.re[i];
            g_lam_im[i] += gim[i] * cache.im[i];
        }
        if let Some(g_x) = g_x {
            for i in 0..keep {
                gre[i] *= lam_re[i];
                gim[i] *= lam_im[i];
            }
            self.dft.forward_adjoint(&gre, &gim, g_x);
            if let Some(t) = &self.taps {
                g_x.iter_mut().zip(t).for_each(|(g, w)| *g *= w);
            }
        }
    }
}

fn check_layout(x: &[f64], w: &FrequencyWeights) -> Result<usize> {
    if w.channels == 0 || !x.len().is_multiple_of(w.channels) {
        return Err(Error::shape(format!("{} values do not split into {} channels", x.len(), w.channels)));
    }
    let len = x.len() / w.channels;
    if bin_count(len) != w.bins {
        return Err(Error::shape(format!(
            "length {len} has {} bins, weights have {}",
            bin_count(len),
            w.bins
        )));
    }
    Ok(len)
}

/// Apply the weights to a channel-major window (`C × L`).
pub fn transform(x: &[f64], w: &FrequencyWeights) -> Result<Vec<f64>> {
    let len = check_layout(x, w)?;
    let mut op = SpectralOperator::new(len, OperatorOptions::default())?;
    let mut out = vec![0.0; x.len()];
    for c in 0..w.channels {
        let (lr, li) = w.channel(c);
        op.apply(&x[c * len..(c + 1) * len], lr, li, &mut out[c * len..(c + 1) * len], None);
    }
    Ok(out)
}

/// Vector-Jacobian product of [`transform`]:
/// returns `(grad_x, grad_lambda_r, grad_lambda_i)`.
pub fn transform_vjp(
    x: &[f64],
    w: &FrequencyWeights,
    upstream: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let len = check_layout(x, w)?;
    if upstream.len() != x.len() {
        return Err(Error::shape("upstream gradient and input differ in length"));
    }
    let mut op = SpectralOperator::new(len, OperatorOptions::default())?;
    let mut gx = vec![0.0; x.len()];
    let mut glr = vec![0.0; w.re.len()];
    let mut gli = vec![0.0; w.im.len()];
    let mut scratch = vec![0.0; len];
    let k = w.bins;
    for c in 0..w.channels {
        let (lr, li) = w.channel(c);
        let mut cache = ChannelCache::default();
        op.apply(&x[c * len..(c + 1) * len], lr, li, &mut scratch, Some(&mut cache));
        op.vjp(
            &cache,
            lr,
            li,
            &upstream[c * len..(c + 1) * len],
            &mut glr[c * k..(c + 1) * k],
            &mut gli[c * k..(c + 1) * k],
            Some(&mut gx[c * len..(c + 1) * len]),
        );
    }
    Ok((gx, glr, gli))
}
