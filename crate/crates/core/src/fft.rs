//! Complex FFT for arbitrary lengths.
//!
//! Power-of-two lengths use an iterative radix-2 transform. Any other length
//! goes through Bluestein's chirp-z reformulation, which rewrites the DFT as
//! a circular convolution evaluated with a power-of-two transform of length
//! at least `2n - 1`.

use std::f64::consts::PI;

use num_complex::Complex64;

#[derive(Debug, Clone)]
pub struct FftPlan {
    n: usize,
    kind: PlanKind,
}

#[derive(Debug, Clone)]
enum PlanKind {
    Radix2(Radix2),
    Bluestein(Bluestein),
}

impl FftPlan {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "FFT length must be positive");
        let kind = if n.is_power_of_two() {
            PlanKind::Radix2(Radix2::new(n))
        } else {
            PlanKind::Bluestein(Bluestein::new(n))
        };
        FftPlan { n, kind }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place forward transform, `X[k] = Σ x[j]·e^{-2πi jk/n}`.
    pub fn forward(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.n);
        match &self.kind {
            PlanKind::Radix2(p) => p.transform(data, false),
            PlanKind::Bluestein(p) => p.transform(data, false),
        }
    }

    /// In-place inverse transform, including the `1/n` normalization.
    pub fn inverse(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.n);
        match &self.kind {
            PlanKind::Radix2(p) => p.transform(data, true),
            PlanKind::Bluestein(p) => p.transform(data, true),
        }
        let scale = 1.0 / self.n as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    /// Forward transform of a real signal.
    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }
}

#[derive(Debug, Clone)]
struct Radix2 {
    n: usize,
    // e^{-2πi k/n} for k < n/2
    twiddles: Vec<Complex64>,
}

impl Radix2 {
    fn new(n: usize) -> Self {
        let twiddles = (0..n / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64))
            .collect();
        Radix2 { n, twiddles }
    }

    /// Unnormalized transform; `inverse` conjugates the twiddles.
    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.n;
        if n == 1 {
            return;
        }
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if i < j {
                data.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let mut w = self.twiddles[k * stride];
                    if inverse {
                        w = w.conj();
                    }
                    let a = data[start + k];
                    let b = data[start + k + half] * w;
                    data[start + k] = a + b;
                    data[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }
}

#[derive(Debug, Clone)]
struct Bluestein {
    n: usize,
    inner: Radix2,
    // e^{-πi k²/n}
    chirp: Vec<Complex64>,
    // forward transform of the conjugate chirp, wrapped to the inner length
    kernel_fft: Vec<Complex64>,
}

impl Bluestein {
    fn new(n: usize) -> Self {
        let m = (2 * n - 1).next_power_of_two();
        let inner = Radix2::new(m);
        // k² mod 2n keeps the phase argument small
        let chirp: Vec<Complex64> = (0..n)
            .map(|k| {
                let q = ((k as u128 * k as u128) % (2 * n as u128)) as f64;
                Complex64::from_polar(1.0, -PI * q / n as f64)
            })
            .collect();
        let mut kernel = vec![Complex64::new(0.0, 0.0); m];
        kernel[0] = chirp[0].conj();
        for k in 1..n {
            kernel[k] = chirp[k].conj();
            kernel[m - k] = chirp[k].conj();
        }
        inner.transform(&mut kernel, false);
        Bluestein {
            n,
            inner,
            chirp,
            kernel_fft: kernel,
        }
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.n;
        let m = self.inner.n;
        // the inverse DFT is the conjugate of the forward DFT of the conjugate
        let mut buf = vec![Complex64::new(0.0, 0.0); m];
        for k in 0..n {
            let x = if inverse { data[k].conj() } else { data[k] };
            buf[k] = x * self.chirp[k];
        }
        self.inner.transform(&mut buf, false);
        for (b, &kf) in buf.iter_mut().zip(&self.kernel_fft) {
            *b *= kf;
        }
        self.inner.transform(&mut buf, true);
        let scale = 1.0 / m as f64;
        for k in 0..n {
            let v = buf[k] * scale * self.chirp[k];
            data[k] = if inverse { v.conj() } else { v };
        }
    }
}
