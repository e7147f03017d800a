//! Forecasting backbones: a per-channel linear map and DLinear.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{axpy, dot, Grads, ParamId, ParamStore, Tensor};

pub const DEFAULT_KERNEL: usize = 25;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum BackboneKind {
    Linear,
    #[default]
    DLinear,
}

impl BackboneKind {
    pub fn name(self) -> &'static str {
        match self {
            BackboneKind::Linear => "linear",
            BackboneKind::DLinear => "dlinear",
        }
    }
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(BackboneKind::Linear),
            "dlinear" => Ok(BackboneKind::DLinear),
            other => Err(Error::Config(format!("unknown backbone `{other}`"))),
        }
    }
}

impl std::fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Trend and seasonal parts of a series; `trend + seasonal == x`.
pub fn moving_average_decompose(x: &[f64], kernel: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if kernel.is_multiple_of(2) {
        return Err(Error::invalid(format!("moving-average kernel must be odd, got {kernel}")));
    }
    if kernel > x.len() {
        return Err(Error::invalid(format!("kernel {kernel} longer than series {}", x.len())));
    }
    let mut trend = vec![0.0; x.len()];
    moving_average(x, kernel, &mut trend);
    let seasonal = x.iter().zip(&trend).map(|(a, t)| a - t).collect();
    Ok((trend, seasonal))
}

/// Centered moving average with the edge values replicated as padding.
fn moving_average(x: &[f64], kernel: usize, out: &mut [f64]) {
    let n = x.len() as isize;
    let r = (kernel / 2) as isize;
    let inv = 1.0 / kernel as f64;
    let at = |j: isize| x[j.clamp(0, n - 1) as usize];
    let mut sum: f64 = (-r..=r).map(at).sum();
    out[0] = sum * inv;
    for i in 1..n {
        sum += at(i + r) - at(i - 1 - r);
        out[i as usize] = sum * inv;
    }
}

/// Adjoint of [`moving_average`]: scatters `g` back onto the inputs.
fn moving_average_adjoint(g: &[f64], kernel: usize, out: &mut [f64]) {
    let n = g.len() as isize;
    let r = (kernel / 2) as isize;
    let inv = 1.0 / kernel as f64;
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n {
        let gi = g[i as usize] * inv;
        for j in (i - r)..=(i + r) {
            out[j.clamp(0, n - 1) as usize] += gi;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Head {
    w: ParamId,
    b: ParamId,
}

impl Head {
    fn init(store: &mut ParamStore, prefix: &str, groups: usize, lookback: usize, horizon: usize, weight: Option<f64>, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (lookback as f64).sqrt();
        let w: Vec<f64> = match weight {
            Some(v) => vec![v; groups * horizon * lookback],
            None => (0..groups * horizon * lookback).map(|_| rng.random_range(-bound..=bound)).collect(),
        };
        let b: Vec<f64> = (0..groups * horizon).map(|_| rng.random_range(-bound..=bound)).collect();
        let w = store.add(format!("{prefix}.w"), Tensor { shape: vec![groups, horizon, lookback], data: w });
        let b = store.add(format!("{prefix}.b"), Tensor { shape: vec![groups, horizon], data: b });
        Head { w, b }
    }

    fn bind(store: &ParamStore, prefix: &str) -> Result<Self> {
        let get = |n: String| store.find(&n).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{n}`")));
        Ok(Head { w: get(format!("{prefix}.w"))?, b: get(format!("{prefix}.b"))? })
    }

    #[inline]
    fn forward(&self, store: &ParamStore, g: usize, lookback: usize, horizon: usize, x: &[f64], out: &mut [f64], accumulate: bool) {
        let w = &store.get(self.w)[g * horizon * lookback..(g + 1) * horizon * lookback];
        let b = &store.get(self.b)[g * horizon..(g + 1) * horizon];
        for h in 0..horizon {
            let v = b[h] + dot(&w[h * lookback..(h + 1) * lookback], x);
            if accumulate {
                out[h] += v;
            } else {
                out[h] = v;
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    #[inline]
    fn backward(&self, store: &ParamStore, grads: &mut Grads, g: usize, lookback: usize, horizon: usize, x: &[f64], gy: &[f64], gx: Option<&mut [f64]>) {
        {
            let gw = &mut grads.get_mut(self.w)[g * horizon * lookback..(g + 1) * horizon * lookback];
            for (h, &gv) in gy.iter().enumerate() {
                axpy(gv, x, &mut gw[h * lookback..(h + 1) * lookback]);
            }
        }
        {
            let gb = &mut grads.get_mut(self.b)[g * horizon..(g + 1) * horizon];
            gb.iter_mut().zip(gy).for_each(|(a, b)| *a += b);
        }
        if let Some(gx) = gx {
            let w = &store.get(self.w)[g * horizon * lookback..(g + 1) * horizon * lookback];
            gx.iter_mut().for_each(|v| *v = 0.0);
            for (h, &gv) in gy.iter().enumerate() {
                axpy(gv, &w[h * lookback..(h + 1) * lookback], gx);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    pub lookback: usize,
    pub horizon: usize,
    pub channels: usize,
    /// One head per channel; `false` shares a single head across channels.
    pub individual: bool,
    pub kernel: usize,
}

impl BackboneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lookback < 2 || self.horizon < 1 || self.channels < 1 {
            return Err(Error::Config(format!(
                "backbone needs lookback >= 2, horizon >= 1, channels >= 1 (got {}, {}, {})",
                self.lookback, self.horizon, self.channels
            )));
        }
        if self.kind == BackboneKind::DLinear && (self.kernel.is_multiple_of(2) || self.kernel > self.lookback) {
            return Err(Error::Config(format!(
                "moving-average kernel must be odd and at most the lookback {} (got {})",
                self.lookback, self.kernel
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Heads {
    Linear(Head),
    DLinear { trend: Head, seasonal: Head },
}

/// Backbone parameters inside a shared [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub spec: BackboneSpec,
    heads: Heads,
}

/// Forward values the backward pass needs (DLinear's decomposition).
#[derive(Clone, Debug, Default)]
pub struct BackboneCache {
    trend: Vec<f64>,
    seasonal: Vec<f64>,
}

impl Backbone {
    pub fn init(store: &mut ParamStore, spec: BackboneSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let groups = if spec.individual { spec.channels } else { 1 };
        let (l, h) = (spec.lookback, spec.horizon);
        let heads = match spec.kind {
            BackboneKind::Linear => Heads::Linear(Head::init(store, "backbone", groups, l, h, None, rng)),
            BackboneKind::DLinear => {
                let w0 = Some(1.0 / l as f64);
                let seasonal = Head::init(store, "backbone.seasonal", groups, l, h, w0, rng);
                let trend = Head::init(store, "backbone.trend", groups, l, h, w0, rng);
                Heads::DLinear { trend, seasonal }
            }
        };
        Ok(Backbone { spec, heads })
    }

    pub fn bind(store: &ParamStore, spec: BackboneSpec) -> Result<Self> {
        spec.validate()?;
        let heads = match spec.kind {
            BackboneKind::Linear => Heads::Linear(Head::bind(store, "backbone")?),
            BackboneKind::DLinear => Heads::DLinear {
                trend: Head::bind(store, "backbone.trend")?,
                seasonal: Head::bind(store, "backbone.seasonal")?,
            },
        };
        let groups = if spec.individual { spec.channels } else { 1 };
        let (w_shape, b_shape) = (vec![groups, spec.horizon, spec.lookback], vec![groups, spec.horizon]);
        for (i, id) in self_ids(&heads).into_iter().enumerate() {
            let (shape, want) = (&store.tensor(id).shape, if i % 2 == 0 { &w_shape } else { &b_shape });
            if shape != want {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` has shape {shape:?}, expected {want:?}",
                    store.name(id)
                )));
            }
        }
        Ok(Backbone { spec, heads })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self_ids(&self.heads)
    }

    #[inline]
    fn group(&self, c: usize) -> usize {
        if self.spec.individual {
            c
        } else {
            0
        }
    }

    /// Forecast `H` values of channel `c` from its `L` inputs.
    pub fn forward_channel(&self, store: &ParamStore, c: usize, x: &[f64], out: &mut [f64], cache: Option<&mut BackboneCache>) {
        let (l, h, g) = (self.spec.lookback, self.spec.horizon, self.group(c));
        match &self.heads {
            Heads::Linear(head) => head.forward(store, g, l, h, x, out, false),
            Heads::DLinear { trend, seasonal } => {
                let mut t = vec![0.0; l];
                moving_average(x, self.spec.kernel, &mut t);
                let s: Vec<f64> = x.iter().zip(&t).map(|(a, b)| a - b).collect();
                seasonal.forward(store, g, l, h, &s, out, false);
                trend.forward(store, g, l, h, &t, out, true);
                if let Some(cache) = cache {
                    cache.trend = t;
                    cache.seasonal = s;
                }
            }
        }
    }

    /// Accumulate parameter gradients for channel `c`; overwrite `gx` with
    /// the input cotangent when given. DLinear needs the cache from the
    /// matching forward call.
    #[allow(clippy::too_many_arguments)]
    pub fn backward_channel(
        &self,
        store: &ParamStore,
        c: usize,
        x: &[f64],
        cache: &BackboneCache,
        gy: &[f64],
        grads: &mut Grads,
        gx: Option<&mut [f64]>,
    ) {
        let (l, h, g) = (self.spec.lookback, self.spec.horizon, self.group(c));
        match &self.heads {
            Heads::Linear(head) => head.backward(store, grads, g, l, h, x, gy, gx),
            Heads::DLinear { trend, seasonal } => match gx {
                None => {
                    seasonal.backward(store, grads, g, l, h, &cache.seasonal, gy, None);
                    trend.backward(store, grads, g, l, h, &cache.trend, gy, None);
                }
                Some(gx) => {
                    let mut gs = vec![0.0; l];
                    let mut gt = vec![0.0; l];
                    seasonal.backward(store, grads, g, l, h, &cache.seasonal, gy, Some(&mut gs));
                    trend.backward(store, grads, g, l, h, &cache.trend, gy, Some(&mut gt));
                    // x feeds the seasonal part directly and both parts through the average.
                    let diff: Vec<f64> = gt.iter().zip(&gs).map(|(a, b)| a - b).collect();
                    moving_average_adjoint(&diff, self.spec.kernel, gx);
                    gx.iter_mut().zip(&gs).for_each(|(a, b)| *a += b);
                }
            },
        }
    }

    /// Forecast a channel-major window (`C × L` in, `C × H` out).
    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        let (l, h, cc) = (self.spec.lookback, self.spec.horizon, self.spec.channels);
        if x.len() != l * cc {
            return Err(Error::shape(format!("input has {} values, backbone expects {cc}x{l}", x.len())));
        }
        let mut out = vec![0.0; h * cc];
        for c in 0..cc {
            self.forward_channel(store, c, &x[c * l..(c + 1) * l], &mut out[c * h..(c + 1) * h], None);
        }
        Ok(out)
    }
}

fn self_ids(heads: &Heads) -> Vec<ParamId> {
    match heads {
        Heads::Linear(h) => vec![h.w, h.b],
        Heads::DLinear { trend, seasonal } => vec![seasonal.w, seasonal.b, trend.w, trend.b],
    }
}

/// A backbone with its own parameters, for stand-alone use.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneModel {
    pub store: ParamStore,
    pub backbone: Backbone,
}

impl BackboneModel {
    pub fn new(spec: BackboneSpec, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = crate::nn::component_rng(seed, crate::nn::streams::BACKBONE);
        let backbone = Backbone::init(&mut store, spec, &mut rng)?;
        Ok(BackboneModel { store, backbone })
    }
}

pub fn backbone_forward(model: &BackboneModel, x: &[f64]) -> Result<Vec<f64>> {
    model.backbone.forward(&model.store, x)
}

/// Gradients of `⟨upstream, forecast(x)⟩` with respect to the parameters and `x`.
pub fn backbone_vjp(model: &BackboneModel, x: &[f64], upstream: &[f64]) -> Result<(Grads, Vec<f64>)> {
    let spec = &model.backbone.spec;
    let (l, h, cc) = (spec.lookback, spec.horizon, spec.channels);
    if x.len() != l * cc || upstream.len() != h * cc {
        return Err(Error::shape("input or upstream gradient does not match the backbone"));
    }
    let mut grads = model.store.zero_grads();
    let mut gx = vec![0.0; x.len()];
    let mut out = vec![0.0; h];
    for c in 0..cc {
        let xc = &x[c * l..(c + 1) * l];
        let mut cache = BackboneCache::default();
        model.backbone.forward_channel(&model.store, c, xc, &mut out, Some(&mut cache));
        model.backbone.backward_channel(
            &model.store,
            c,
            xc,
            &cache,
            &upstream[c * h..(c + 1) * h],
            &mut grads,
            Some(&mut gx[c * l..(c + 1) * l]),
        );
    }
    Ok((grads, gx))
}
