//! Named parameter tensors and the dense layer used by every learnable block.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!("shape {shape:?} holds {n} values, got {}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    name: String,
    tensor: Tensor,
    trainable: bool,
}

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(Entry { name, tensor, trainable: true });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].tensor.data
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].tensor.data
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.tensor))
    }

    pub fn zero_grads(&self) -> Grads {
        Grads { data: self.entries.iter().map(|e| vec![0.0; e.tensor.data.len()]).collect() }
    }

    /// Replace tensor values from another store with the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            if a.name != b.name || a.tensor.shape != b.tensor.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` {:?} does not match `{}` {:?}",
                    a.name, a.tensor.shape, b.name, b.tensor.shape
                )));
            }
            a.tensor.data.copy_from_slice(&b.tensor.data);
        }
        Ok(())
    }

    /// FNV-1a over the bit patterns of the given tensors.
    pub fn checksum(&self, ids: &[ParamId]) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for id in ids {
            for v in self.get(*id) {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }
}

/// Gradient buffers laid out like a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub data: Vec<Vec<f64>>,
}

impl Grads {
    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.0]
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub fn zero(&mut self) {
        for g in &mut self.data {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in &mut self.data {
            g.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().flatten().all(|v| v.is_finite())
    }
}

/// Deterministic RNG for one component of a run. Distinct streams keep,
/// say, backbone initialization independent of whether a TIFO layer exists.
pub fn component_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub mod streams {
    pub const BACKBONE: u64 = 1;
    pub const TIFO: u64 = 2;
    pub const FAN: u64 = 3;
    pub const SAN: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const SYNTH: u64 = 6;
}

pub fn glorot_uniform(rng: &mut impl Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-a..=a)).collect()
}

/// Affine map `y = W x + b` with `W` stored row-major as `[out, inp]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub inp: usize,
    pub out: usize,
}

impl Dense {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        inp: usize,
        out: usize,
        rng: &mut impl Rng,
        bias: f64,
    ) -> Self {
        Self::init_named(store, &format!("{prefix}.w"), &format!("{prefix}.b"), inp, out, rng, bias)
    }

    pub fn init_named(
        store: &mut ParamStore,
        w_name: &str,
        b_name: &str,
        inp: usize,
        out: usize,
        rng: &mut impl Rng,
        bias: f64,
    ) -> Self {
        let w = glorot_uniform(rng, inp, out, inp * out);
        let w = store.add(w_name, Tensor { shape: vec![out, inp], data: w });
        let b = store.add(b_name, Tensor { shape: vec![out], data: vec![bias; out] });
        Dense { w, b, inp, out }
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64], y: &mut [f64]) {
        let w = store.get(self.w);
        let b = store.get(self.b);
        for (o, yo) in y.iter_mut().enumerate().take(self.out) {
            let row = &w[o * self.inp..(o + 1) * self.inp];
            *yo = b[o] + dot(row, x);
        }
    }

    /// Accumulates parameter gradients; writes the input cotangent into `gx`
    /// when requested (overwriting it).
    pub fn backward(
        &self,
        store: &ParamStore,
        x: &[f64],
        gy: &[f64],
        grads: &mut Grads,
        gx: Option<&mut [f64]>,
    ) {
        {
            let gw = grads.get_mut(self.w);
            for (o, &g) in gy.iter().enumerate() {
                if g != 0.0 {
                    axpy(g, x, &mut gw[o * self.inp..(o + 1) * self.inp]);
                }
            }
        }
        {
            let gb = grads.get_mut(self.b);
            gb.iter_mut().zip(gy).for_each(|(a, b)| *a += b);
        }
        if let Some(gx) = gx {
            let w = store.get(self.w);
            gx.iter_mut().for_each(|v| *v = 0.0);
            for (o, &g) in gy.iter().enumerate() {
                if g != 0.0 {
                    axpy(g, &w[o * self.inp..(o + 1) * self.inp], gx);
                }
            }
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut s3 = 0.0;
    let n = a.len().min(b.len());
    let chunks = n / 4;
    for i in 0..chunks {
        let j = 4 * i;
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    for j in 4 * chunks..n {
        s0 += a[j] * b[j];
    }
    (s0 + s1) + (s2 + s3)
}

#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

#[inline]
pub fn relu(v: f64) -> f64 {
    v.max(0.0)
}

#[inline]
pub fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}
