//! Real-input DFT, its inverse, window functions and bin truncation.
//!
//! Convention: the forward transform is unnormalized,
//! `X[k] = Σ_n x[n]·e^{-2πi kn/L}`, and the inverse carries the `1/L`.
//! A length-`L` real series has `K = ⌊L/2⌋ + 1` non-redundant bins.

use std::f64::consts::PI;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::fft::{self, Complex, FftPlan};

/// Number of non-redundant bins of a real series of length `len`.
#[inline]
pub fn bin_count(len: usize) -> usize {
    len / 2 + 1
}

/// Half-spectrum of one real channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    len: usize,
}

impl Spectrum {
    pub fn new(re: Vec<f64>, im: Vec<f64>, len: usize) -> Result<Self> {
        let s = Spectrum { re, im, len };
        s.check()?;
        Ok(s)
    }

    pub fn zeros(len: usize) -> Self {
        let k = bin_count(len);
        Spectrum { re: vec![0.0; k], im: vec![0.0; k], len }
    }

    /// Length of the time series this spectrum came from.
    pub fn origin_len(&self) -> usize {
        self.len
    }

    pub fn bins(&self) -> usize {
        self.re.len()
    }

    fn check(&self) -> Result<()> {
        if self.len < 2 {
            return Err(Error::invalid(format!("series length {} < 2", self.len)));
        }
        let k = bin_count(self.len);
        if self.re.len() != k || self.im.len() != k {
            return Err(Error::shape(format!(
                "spectrum has {} real / {} imaginary bins, length {} needs {k}",
                self.re.len(),
                self.im.len(),
                self.len
            )));
        }
        Ok(())
    }
}

/// Taper applied to a series before it is transformed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum WindowFn {
    #[default]
    Rectangular,
    /// Symmetric Hann, `0.5·(1 − cos(2πn/(L−1)))`.
    Hann,
}

impl WindowFn {
    pub fn taps(self, len: usize) -> Vec<f64> {
        match self {
            WindowFn::Rectangular => vec![1.0; len],
            WindowFn::Hann => {
                if len < 2 {
                    return vec![1.0; len];
                }
                let d = (len - 1) as f64;
                (0..len)
                    .map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / d).cos()))
                    .collect()
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WindowFn::Rectangular => "rect",
            WindowFn::Hann => "hann",
        }
    }
}

impl std::str::FromStr for WindowFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rect" | "rectangular" => Ok(WindowFn::Rectangular),
            "hann" | "hanning" => Ok(WindowFn::Hann),
            other => Err(Error::Config(format!("unknown window function `{other}`"))),
        }
    }
}

impl std::fmt::Display for WindowFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Reusable real transform of a fixed length.
///
/// Holds its own scratch buffer, so the hot training loop does not
/// allocate per call.
pub struct RealDft {
    len: usize,
    plan: Rc<FftPlan>,
    buf: Vec<Complex>,
}

impl RealDft {
    pub fn new(len: usize) -> Self {
        RealDft { len, plan: fft::plan(len), buf: vec![Complex::ZERO; len] }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bins(&self) -> usize {
        bin_count(self.len)
    }

    /// Forward transform of `x` into `re`/`im` (each `K` long).
    pub fn forward_into(&mut self, x: &[f64], re: &mut [f64], im: &mut [f64]) {
        debug_assert_eq!(x.len(), self.len);
        for (b, &v) in self.buf.iter_mut().zip(x) {
            *b = Complex::new(v, 0.0);
        }
        self.plan.forward(&mut self.buf);
        let k = self.bins();
        for i in 0..k {
            re[i] = self.buf[i].re;
            im[i] = self.buf[i].im;
        }
        // Exact zeros where real input forces them.
        im[0] = 0.0;
        if self.len.is_multiple_of(2) {
            im[k - 1] = 0.0;
        }
    }

    /// Inverse transform of a half-spectrum into `out`.
    ///
    /// The imaginary parts of the DC bin and (for even `L`) the Nyquist bin
    /// are ignored, since a real series cannot carry them.
    pub fn inverse_into(&mut self, re: &[f64], im: &[f64], out: &mut [f64]) {
        let n = self.len;
        let k = self.bins();
        self.buf[0] = Complex::new(re[0], 0.0);
        for i in 1..k {
            let c = if n.is_multiple_of(2) && i == k - 1 {
                Complex::new(re[i], 0.0)
            } else {
                Complex::new(re[i], im[i])
            };
            self.buf[i] = c;
            if n - i != i {
                self.buf[n - i] = c.conj();
            }
        }
        self.plan.inverse_unscaled(&mut self.buf);
        let scale = 1.0 / n as f64;
        for (o, b) in out.iter_mut().zip(&self.buf) {
            *o = b.re * scale;
        }
    }

    /// Adjoint of [`RealDft::inverse_into`]: maps a time-domain cotangent
    /// onto cotangents for the real and imaginary bins.
    pub fn inverse_adjoint(&mut self, g: &[f64], gre: &mut [f64], gim: &mut [f64]) {
        self.forward_into(g, gre, gim);
        let n = self.len;
        let k = self.bins();
        let inv = 1.0 / n as f64;
        for i in 0..k {
            let edge = i == 0 || (n.is_multiple_of(2) && i == k - 1);
            let c = if edge { inv } else { 2.0 * inv };
            gre[i] *= c;
            gim[i] = if edge { 0.0 } else { gim[i] * c };
        }
    }

    /// Adjoint of [`RealDft::forward_into`].
    pub fn forward_adjoint(&mut self, gre: &[f64], gim: &[f64], out: &mut [f64]) {
        let k = self.bins();
        for b in self.buf.iter_mut() {
            *b = Complex::ZERO;
        }
        for i in 0..k {
            self.buf[i] = Complex::new(gre[i], gim[i]);
        }
        self.plan.inverse_unscaled(&mut self.buf);
        for (o, b) in out.iter_mut().zip(&self.buf) {
            *o = b.re;
        }
    }
}

fn check_series(x: &[f64]) -> Result<()> {
    if x.len() < 2 {
        return Err(Error::invalid(format!("series length {} < 2", x.len())));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite value {} at index {i}", x[i])));
    }
    Ok(())
}

/// Forward real DFT of one channel.
pub fn dft_forward(x: &[f64]) -> Result<Spectrum> {
    check_series(x)?;
    let mut dft = RealDft::new(x.len());
    let mut s = Spectrum::zeros(x.len());
    dft.forward_into(x, &mut s.re, &mut s.im);
    Ok(s)
}

/// Inverse real DFT; exact inverse of [`dft_forward`] up to rounding.
pub fn dft_inverse(s: &Spectrum) -> Result<Vec<f64>> {
    s.check()?;
    let mut dft = RealDft::new(s.len);
    let mut out = vec![0.0; s.len];
    dft.inverse_into(&s.re, &s.im, &mut out);
    Ok(out)
}

pub fn apply_window(x: &[f64], w: WindowFn) -> Vec<f64> {
    match w {
        WindowFn::Rectangular => x.to_vec(),
        WindowFn::Hann => x.iter().zip(w.taps(x.len())).map(|(a, t)| a * t).collect(),
    }
}

/// Zero every bin with index `>= keep`.
pub fn truncate_bins(s: &Spectrum, keep: usize) -> Result<Spectrum> {
    let k = s.bins();
    if keep == 0 || keep > k {
        return Err(Error::invalid(format!("keep = {keep} outside 1..={k}")));
    }
    let mut out = s.clone();
    for i in keep..k {
        out.re[i] = 0.0;
        out.im[i] = 0.0;
    }
    Ok(out)
}

pub fn amplitude(s: &Spectrum) -> Vec<f64> {
    s.re.iter().zip(&s.im).map(|(r, i)| r.hypot(*i)).collect()
}

/// Amplitudes of `x` after windowing, written into `out` (`K` long).
pub(crate) fn amplitudes_into(
    dft: &mut RealDft,
    x: &[f64],
    taps: Option<&[f64]>,
    re: &mut [f64],
    im: &mut [f64],
    out: &mut [f64],
) {
    match taps {
        Some(t) => {
            let xw: Vec<f64> = x.iter().zip(t).map(|(a, b)| a * b).collect();
            dft.forward_into(&xw, re, im);
        }
        None => dft.forward_into(x, re, im),
    }
    for ((o, r), i) in out.iter_mut().zip(re.iter()).zip(im.iter()) {
        *o = r.hypot(*i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn impulse_has_flat_amplitude() {
        let s = dft_forward(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(close(&amplitude(&s), &[1.0, 1.0, 1.0], 1e-12));
    }

    #[test]
    fn constant_maps_to_dc() {
        let s = dft_forward(&[1.0; 4]).unwrap();
        assert!(close(&s.re, &[4.0, 0.0, 0.0], 1e-12));
        assert!(close(&s.im, &[0.0, 0.0, 0.0], 1e-12));
    }

    #[test]
    fn ramp_of_four() {
        let s = dft_forward(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(close(&s.re, &[10.0, -2.0, -2.0], 1e-12));
        assert!(close(&s.im, &[0.0, 2.0, 0.0], 1e-12));
        assert!(close(&amplitude(&s), &[10.0, 2.828427, 2.0], 1e-6));
    }

    #[test]
    fn inverse_examples() {
        let dc = Spectrum::new(vec![4.0, 0.0, 0.0], vec![0.0; 3], 4).unwrap();
        assert!(close(&dft_inverse(&dc).unwrap(), &[1.0; 4], 1e-12));
        let ramp = Spectrum::new(vec![10.0, -2.0, -2.0], vec![0.0, 2.0, 0.0], 4).unwrap();
        assert!(close(&dft_inverse(&ramp).unwrap(), &[1.0, 2.0, 3.0, 4.0], 1e-12));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(dft_forward(&[1.0, f64::NAN, 2.0]).is_err());
        assert!(dft_forward(&[1.0]).is_err());
        assert!(Spectrum::new(vec![0.0; 3], vec![0.0; 3], 6).is_err());
        let mut s = Spectrum::zeros(4);
        s.re.push(1.0);
        assert!(dft_inverse(&s).is_err());
    }

    #[test]
    fn hann_taps() {
        assert!(close(&WindowFn::Hann.taps(4), &[0.0, 0.75, 0.75, 0.0], 1e-12));
        let x = [3.0, -2.0, 7.0];
        assert!(close(&apply_window(&x, WindowFn::Hann), &[0.0, -2.0, 0.0], 1e-12));
        assert_eq!(apply_window(&x, WindowFn::Rectangular), x.to_vec());
    }

    #[test]
    fn truncation() {
        let s = dft_forward(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(truncate_bins(&s, 3).unwrap(), s);
        let dc = truncate_bins(&s, 1).unwrap();
        assert!(close(&dc.re, &[10.0, 0.0, 0.0], 0.0));
        assert!(close(&dft_inverse(&dc).unwrap(), &[2.5; 4], 1e-12));
        assert!(truncate_bins(&s, 0).is_err());
        assert!(truncate_bins(&s, 4).is_err());
    }

    #[test]
    fn amplitude_edge_cases() {
        assert_eq!(amplitude(&Spectrum::zeros(6)), vec![0.0; 4]);
        let s = Spectrum::new(vec![-3.0, 0.0, 0.0], vec![0.0; 3], 4).unwrap();
        assert_eq!(amplitude(&s), vec![3.0, 0.0, 0.0]);
    }

    #[test]
    fn hermitian_zeros_are_exact() {
        for len in [5usize, 6, 96, 97] {
            let x: Vec<f64> = (0..len).map(|i| (i as f64 * 0.7).sin() + 0.1 * i as f64).collect();
            let s = dft_forward(&x).unwrap();
            assert_eq!(s.im[0], 0.0);
            if len % 2 == 0 {
                assert_eq!(s.im[s.bins() - 1], 0.0);
            }
        }
    }
}
