//! Count Sketch and Tensor Sketch projections.
//!
//! A [`SketchParams`] maps each of `c` input coordinates to one of `d`
//! buckets with a random sign. Tables are drawn from a ChaCha8 stream keyed
//! by the 64-bit seed: for each input index in order, one bucket draw
//! (`gen_range(0..d)`) then one sign draw (`gen::<bool>()`, `true` ↦ +1).
//! They are a pure function of `(c, d, seed)`, so only that triple needs to
//! be persisted.
//!
//! The Tensor Sketch of a vector `m` is the circular convolution of two
//! independent count sketches of `m`, computed in the frequency domain. It
//! is linear in `m ⊗ m`, and `⟨TS(a), TS(b)⟩` is an unbiased estimate of
//! `⟨a, b⟩²`.
//!
//! Each count sketch has at most `c` nonzeros, so the convolution summed
//! over locations also equals scattering the `c × c` Gram matrix into
//! bucket `(h₁(i) + h₂(j)) mod d` with sign `s₁(i)s₂(j)`. When `c²` is
//! small next to `d log d` that direct form is used instead of the FFT;
//! both give the same values up to rounding.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bilinear::{bilinear_backward, bilinear_forward};
use crate::error::{Result, TleError};
use crate::fft::FftPlan;
use crate::tensor::{EncodedVector, FeatureMap};

/// Compact dimension used for 1024-channel inputs.
pub const DEFAULT_SKETCH_DIM: usize = 8196;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SketchParams {
    input_dim: usize,
    output_dim: usize,
    seed: u64,
    buckets: Vec<usize>,
    signs: Vec<i8>,
}

impl SketchParams {
    pub fn new(input_dim: usize, output_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(TleError::InvalidArgument(format!(
                "sketch dimensions must be positive, got c={input_dim} d={output_dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut buckets = Vec::with_capacity(input_dim);
        let mut signs = Vec::with_capacity(input_dim);
        for _ in 0..input_dim {
            buckets.push(rng.gen_range(0..output_dim));
            signs.push(if rng.gen::<bool>() { 1 } else { -1 });
        }
        Ok(SketchParams {
            input_dim,
            output_dim,
            seed,
            buckets,
            signs,
        })
    }

    /// Params from explicit tables. The seed is recorded but does not
    /// generate the tables.
    pub fn from_tables(output_dim: usize, buckets: Vec<usize>, signs: Vec<i8>, seed: u64) -> Result<Self> {
        if buckets.is_empty() || output_dim == 0 {
            return Err(TleError::InvalidArgument("sketch dimensions must be positive".into()));
        }
        if buckets.len() != signs.len() {
            return Err(TleError::LengthMismatch {
                expected: buckets.len(),
                found: signs.len(),
            });
        }
        if let Some(&b) = buckets.iter().find(|&&b| b >= output_dim) {
            return Err(TleError::InvalidArgument(format!("bucket {b} out of range for d={output_dim}")));
        }
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(TleError::InvalidArgument("signs must be +1 or -1".into()));
        }
        Ok(SketchParams {
            input_dim: buckets.len(),
            output_dim,
            seed,
            buckets,
            signs,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn buckets(&self) -> &[usize] {
        &self.buckets
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    fn apply_unchecked(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for ((&b, &s), &x) in self.buckets.iter().zip(&self.signs).zip(v) {
            out[b] += f64::from(s) * x;
        }
    }

    /// Transpose of the sketch: `out[i] += s(i)·u[h(i)]`.
    fn transpose_accumulate(&self, u: &[f64], out: &mut [f64]) {
        for ((o, &b), &s) in out.iter_mut().zip(&self.buckets).zip(&self.signs) {
            *o += f64::from(s) * u[b];
        }
    }
}

/// `out[b] = Σ_{i : h(i) = b} s(i)·v[i]`.
pub fn count_sketch_apply(v: &[f64], params: &SketchParams) -> Result<Vec<f64>> {
    if v.len() != params.input_dim {
        return Err(TleError::LengthMismatch {
            expected: params.input_dim,
            found: v.len(),
        });
    }
    let mut out = vec![0.0; params.output_dim];
    params.apply_unchecked(v, &mut out);
    Ok(out)
}

fn mix64(mut z: u64) -> u64 {
    // SplitMix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// How [`TensorSketchEncoder`] evaluates the sketch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SketchPath {
    /// Per-location FFT product of the two count sketches.
    Fft,
    /// Signed scatter of the Gram matrix.
    Direct,
}

/// Two independent count sketches plus the FFT plan for their product.
#[derive(Debug, Clone)]
pub struct TensorSketchEncoder {
    first: SketchParams,
    second: SketchParams,
    plan: FftPlan,
}

impl PartialEq for TensorSketchEncoder {
    fn eq(&self, other: &Self) -> bool {
        self.first == other.first && self.second == other.second
    }
}

impl TensorSketchEncoder {
    /// Derives the two table seeds from one model seed.
    pub fn new(input_dim: usize, output_dim: usize, seed: u64) -> Result<Self> {
        let s1 = mix64(seed.wrapping_mul(2).wrapping_add(0x9e37_79b9_7f4a_7c15));
        let mut s2 = mix64(seed.wrapping_mul(2).wrapping_add(1).wrapping_add(0x9e37_79b9_7f4a_7c15));
        if s2 == s1 {
            s2 = s2.wrapping_add(1);
        }
        Self::from_seeds(input_dim, output_dim, s1, s2)
    }

    pub fn from_seeds(input_dim: usize, output_dim: usize, first_seed: u64, second_seed: u64) -> Result<Self> {
        Self::from_params(
            SketchParams::new(input_dim, output_dim, first_seed)?,
            SketchParams::new(input_dim, output_dim, second_seed)?,
        )
    }

    pub fn from_params(first: SketchParams, second: SketchParams) -> Result<Self> {
        if first.input_dim != second.input_dim || first.output_dim != second.output_dim {
            return Err(TleError::DimensionMismatch(format!(
                "sketch params disagree: ({}, {}) vs ({}, {})",
                first.input_dim, first.output_dim, second.input_dim, second.output_dim
            )));
        }
        if first.seed == second.seed {
            return Err(TleError::InvalidArgument("the two sketches need distinct seeds".into()));
        }
        let plan = FftPlan::new(first.output_dim);
        Ok(TensorSketchEncoder { first, second, plan })
    }

    pub fn input_dim(&self) -> usize {
        self.first.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.first.output_dim
    }

    pub fn first(&self) -> &SketchParams {
        &self.first
    }

    pub fn second(&self) -> &SketchParams {
        &self.second
    }

    fn check_input(&self, x: &FeatureMap) -> Result<()> {
        let c = x.shape().channels;
        if c != self.input_dim() {
            return Err(TleError::DimensionMismatch(format!(
                "tensor sketch expects {} channels, input has {c}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Frequency-domain sketches of every spatial location.
    fn location_spectra(&self, x: &FeatureMap) -> Vec<(Vec<Complex64>, Vec<Complex64>)> {
        let d = self.output_dim();
        let mut a = vec![0.0; d];
        let mut b = vec![0.0; d];
        x.flatten_spatial()
            .iter_rows()
            .map(|m| {
                self.first.apply_unchecked(m, &mut a);
                self.second.apply_unchecked(m, &mut b);
                (self.plan.forward_real(&a), self.plan.forward_real(&b))
            })
            .collect()
    }

    /// Cheaper evaluation path for this encoder's `(c, d)`.
    pub fn path(&self) -> SketchPath {
        let (c, d) = (self.input_dim(), self.output_dim());
        let log_d = usize::BITS - d.leading_zeros();
        if c * c <= d * log_d as usize {
            SketchPath::Direct
        } else {
            SketchPath::Fft
        }
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<EncodedVector> {
        self.forward_with(x, self.path())
    }

    pub fn forward_with(&self, x: &FeatureMap, path: SketchPath) -> Result<EncodedVector> {
        self.check_input(x)?;
        match path {
            SketchPath::Fft => self.forward_fft(x),
            SketchPath::Direct => self.forward_direct(x),
        }
    }

    fn forward_fft(&self, x: &FeatureMap) -> Result<EncodedVector> {
        let d = self.output_dim();
        let mut acc = vec![Complex64::new(0.0, 0.0); d];
        for (fa, fb) in self.location_spectra(x) {
            for ((s, p), q) in acc.iter_mut().zip(&fa).zip(&fb) {
                *s += p * q;
            }
        }
        self.plan.inverse(&mut acc);
        let scale = acc.iter().map(|v| v.re.abs()).fold(1.0, f64::max);
        let residue = acc.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
        debug_assert!(residue <= 1e-8 * scale, "imaginary residue {residue}");
        EncodedVector::new(acc.into_iter().map(|v| v.re).collect())
    }

    fn forward_direct(&self, x: &FeatureMap) -> Result<EncodedVector> {
        let (c, d) = (self.input_dim(), self.output_dim());
        let gram = bilinear_forward(x);
        let mut out = vec![0.0; d];
        for i in 0..c {
            for j in 0..c {
                let (bucket, sign) = self.pair(i, j);
                out[bucket] += sign * gram.values()[i * c + j];
            }
        }
        EncodedVector::new(out)
    }

    fn pair(&self, i: usize, j: usize) -> (usize, f64) {
        let d = self.output_dim();
        let bucket = (self.first.buckets[i] + self.second.buckets[j]) % d;
        let sign = f64::from(self.first.signs[i] * self.second.signs[j]);
        (bucket, sign)
    }

    /// Exact gradient of [`forward`](Self::forward).
    ///
    /// With `a = cs₁(m)`, `b = cs₂(m)` and `y = a ⊛ b`, the upstream `g`
    /// pulls back as `∂a = g ⋆ b` and `∂b = g ⋆ a` (circular
    /// cross-correlations, i.e. `F⁻¹(F(g)·conj F(·))`), followed by the
    /// transposed count sketches.
    pub fn backward(&self, x: &FeatureMap, upstream: &EncodedVector) -> Result<FeatureMap> {
        self.backward_with(x, upstream, self.path())
    }

    pub fn backward_with(&self, x: &FeatureMap, upstream: &EncodedVector, path: SketchPath) -> Result<FeatureMap> {
        self.check_input(x)?;
        let d = self.output_dim();
        if upstream.dim() != d {
            return Err(TleError::LengthMismatch {
                expected: d,
                found: upstream.dim(),
            });
        }
        match path {
            SketchPath::Fft => self.backward_fft(x, upstream),
            SketchPath::Direct => self.backward_direct(x, upstream),
        }
    }

    /// Gathers the upstream into a `c × c` Gram gradient and pulls it back
    /// through the bilinear pooling.
    fn backward_direct(&self, x: &FeatureMap, upstream: &EncodedVector) -> Result<FeatureMap> {
        let c = self.input_dim();
        let g = upstream.values();
        let mut dgram = vec![0.0; c * c];
        for i in 0..c {
            for j in 0..c {
                let (bucket, sign) = self.pair(i, j);
                dgram[i * c + j] = sign * g[bucket];
            }
        }
        bilinear_backward(x, &EncodedVector::new(dgram)?)
    }

    fn backward_fft(&self, x: &FeatureMap, upstream: &EncodedVector) -> Result<FeatureMap> {
        let d = self.output_dim();
        let shape = x.shape();
        let c = shape.channels;
        let fg = self.plan.forward_real(upstream.values());
        let mut out = vec![0.0; shape.len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); d];
        let mut real = vec![0.0; d];
        for ((fa, fb), dm) in self.location_spectra(x).into_iter().zip(out.chunks_exact_mut(c)) {
            for ((o, g), q) in buf.iter_mut().zip(&fg).zip(&fb) {
                *o = g * q.conj();
            }
            self.plan.inverse(&mut buf);
            real.iter_mut().zip(&buf).for_each(|(r, v)| *r = v.re);
            self.first.transpose_accumulate(&real, dm);

            for ((o, g), p) in buf.iter_mut().zip(&fg).zip(&fa) {
                *o = g * p.conj();
            }
            self.plan.inverse(&mut buf);
            real.iter_mut().zip(&buf).for_each(|(r, v)| *r = v.re);
            self.second.transpose_accumulate(&real, dm);
        }
        FeatureMap::new(shape, out)
    }
}

pub fn tensor_sketch_forward(x: &FeatureMap, encoder: &TensorSketchEncoder) -> Result<EncodedVector> {
    encoder.forward(x)
}

pub fn tensor_sketch_backward(
    x: &FeatureMap,
    encoder: &TensorSketchEncoder,
    upstream: &EncodedVector,
) -> Result<FeatureMap> {
    encoder.backward(x, upstream)
}
