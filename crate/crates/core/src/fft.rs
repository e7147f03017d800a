//! Complex FFT used by the real transforms in [`crate::spectral`].
//!
//! Power-of-two lengths use an iterative radix-2 decimation-in-time kernel.
//! Every other length goes through Bluestein's chirp-z reformulation, which
//! turns a length-`n` DFT into a circular convolution of power-of-two size
//! `m >= 2n - 1`.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const ZERO: Complex = Complex { re: 0.0, im: 0.0 };

    #[inline]
    pub fn new(re: f64, im: f64) -> Self {
        Complex { re, im }
    }

    #[inline]
    pub fn cis(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Complex { re: c, im: s }
    }

    #[inline]
    pub fn conj(self) -> Self {
        Complex { re: self.re, im: -self.im }
    }

    #[inline]
    pub fn scale(self, k: f64) -> Self {
        Complex { re: self.re * k, im: self.im * k }
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.re.hypot(self.im)
    }
}

impl std::ops::Add for Complex {
    type Output = Complex;
    #[inline]
    fn add(self, o: Complex) -> Complex {
        Complex { re: self.re + o.re, im: self.im + o.im }
    }
}

impl std::ops::Sub for Complex {
    type Output = Complex;
    #[inline]
    fn sub(self, o: Complex) -> Complex {
        Complex { re: self.re - o.re, im: self.im - o.im }
    }
}

impl std::ops::Mul for Complex {
    type Output = Complex;
    #[inline]
    fn mul(self, o: Complex) -> Complex {
        Complex {
            re: self.re * o.re - self.im * o.im,
            im: self.re * o.im + self.im * o.re,
        }
    }
}

struct Radix2 {
    n: usize,
    // twiddles[k] = exp(-2πi k / n), k < n/2
    twiddles: Vec<Complex>,
    bitrev: Vec<usize>,
}

impl Radix2 {
    fn new(n: usize) -> Self {
        debug_assert!(n.is_power_of_two());
        let twiddles = (0..n / 2)
            .map(|k| Complex::cis(-2.0 * PI * k as f64 / n as f64))
            .collect();
        let bits = n.trailing_zeros();
        let bitrev = (0..n)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        Radix2 { n, twiddles, bitrev }
    }

    /// In-place forward transform (negative exponent, unnormalized).
    fn forward(&self, buf: &mut [Complex]) {
        let n = self.n;
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let w = self.twiddles[k * stride];
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }

    fn inverse_unscaled(&self, buf: &mut [Complex]) {
        for v in buf.iter_mut() {
            *v = v.conj();
        }
        self.forward(buf);
        for v in buf.iter_mut() {
            *v = v.conj();
        }
    }
}

struct Bluestein {
    n: usize,
    inner: Radix2,
    // chirp[j] = exp(-πi j² / n)
    chirp: Vec<Complex>,
    // FFT of the conjugate chirp arranged for circular convolution, pre-scaled by 1/m
    kernel_fft: Vec<Complex>,
}

impl Bluestein {
    fn new(n: usize) -> Self {
        let m = (2 * n - 1).next_power_of_two();
        let inner = Radix2::new(m);
        // j² mod 2n keeps the angle argument small for large j.
        let chirp: Vec<Complex> = (0..n)
            .map(|j| {
                let jj = (j * j) % (2 * n);
                Complex::cis(-PI * jj as f64 / n as f64)
            })
            .collect();
        let mut kernel = vec![Complex::ZERO; m];
        kernel[0] = chirp[0].conj();
        for j in 1..n {
            kernel[j] = chirp[j].conj();
            kernel[m - j] = chirp[j].conj();
        }
        inner.forward(&mut kernel);
        let scale = 1.0 / m as f64;
        for v in kernel.iter_mut() {
            *v = v.scale(scale);
        }
        Bluestein { n, inner, chirp, kernel_fft: kernel }
    }

    fn forward(&self, buf: &mut [Complex]) {
        let m = self.inner.n;
        let mut work = vec![Complex::ZERO; m];
        for j in 0..self.n {
            work[j] = buf[j] * self.chirp[j];
        }
        self.inner.forward(&mut work);
        for (w, k) in work.iter_mut().zip(&self.kernel_fft) {
            *w = *w * *k;
        }
        self.inner.inverse_unscaled(&mut work);
        for k in 0..self.n {
            buf[k] = work[k] * self.chirp[k];
        }
    }
}

enum Kernel {
    Radix2(Radix2),
    Bluestein(Bluestein),
}

/// A reusable complex DFT of fixed length.
pub struct FftPlan {
    len: usize,
    kernel: Kernel,
}

impl FftPlan {
    pub fn new(len: usize) -> Self {
        assert!(len >= 1, "FFT length must be positive");
        let kernel = if len.is_power_of_two() {
            Kernel::Radix2(Radix2::new(len))
        } else {
            Kernel::Bluestein(Bluestein::new(len))
        };
        FftPlan { len, kernel }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Unnormalized forward transform, `X[k] = Σ x[n] e^{-2πi kn/N}`.
    pub fn forward(&self, buf: &mut [Complex]) {
        assert_eq!(buf.len(), self.len);
        match &self.kernel {
            Kernel::Radix2(k) => k.forward(buf),
            Kernel::Bluestein(k) => k.forward(buf),
        }
    }

    /// Unnormalized inverse transform (positive exponent, no 1/N).
    pub fn inverse_unscaled(&self, buf: &mut [Complex]) {
        for v in buf.iter_mut() {
            *v = v.conj();
        }
        self.forward(buf);
        for v in buf.iter_mut() {
            *v = v.conj();
        }
    }
}

thread_local! {
    static PLANS: RefCell<HashMap<usize, Rc<FftPlan>>> = RefCell::new(HashMap::new());
}

/// Cached plan for `len`, shared per thread.
pub fn plan(len: usize) -> Rc<FftPlan> {
    PLANS.with(|p| {
        p.borrow_mut()
            .entry(len)
            .or_insert_with(|| Rc::new(FftPlan::new(len)))
            .clone()
    })
}
