//! Reference computations shared by the integration tests and the
//! acceptance harness. The oracles here are written from scratch; only the
//! Monte Carlo and explicit-matrix helpers drive the crate's sketch.

#![allow(dead_code)]

use tle_core::{FeatureDataset, FeatureMap, TensorSketchEncoder, VideoRecord};

/// Explicit bilinear pooling: Σ over locations of x xᵀ, flattened row-major.
pub fn explicit_bilinear(values: &[f64], channels: usize) -> Vec<f64> {
    let mut g = vec![0.0; channels * channels];
    for loc in values.chunks_exact(channels) {
        for i in 0..channels {
            for j in 0..channels {
                g[i * channels + j] += loc[i] * loc[j];
            }
        }
    }
    g
}

/// Product of one frame from each of `k` equal parts, then exact bilinear
/// pooling, signed square root and L2 normalization.
pub fn oracle_features(video: &VideoRecord, k: usize) -> Vec<f64> {
    let maps = video.maps();
    let n = maps.len();
    let len = maps[0].values().len();
    let mut agg = vec![1.0; len];
    for part in 0..k {
        let (lo, hi) = (part * n / k, (part + 1) * n / k);
        let frame = maps[(lo + hi.max(lo + 1) - 1) / 2].values();
        for (a, v) in agg.iter_mut().zip(frame) {
            *a *= v;
        }
    }
    let c = maps[0].shape().channels;
    let mut y: Vec<f64> = explicit_bilinear(&agg, c)
        .into_iter()
        .map(|v| v.signum() * v.abs().sqrt())
        .collect();
    let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    y.iter_mut().for_each(|v| *v /= norm);
    y
}

/// Multinomial logistic regression trained by full-batch gradient descent.
pub struct Logistic {
    pub classes: usize,
    pub dim: usize,
    pub w: Vec<f64>,
}

impl Logistic {
    pub fn fit(x: &[Vec<f64>], y: &[usize], classes: usize, steps: usize, lr: f64, l2: f64) -> Self {
        let dim = x[0].len();
        let mut w = vec![0.0; classes * (dim + 1)];
        let n = x.len() as f64;
        for _ in 0..steps {
            let mut grad = vec![0.0; w.len()];
            for (xi, &yi) in x.iter().zip(y) {
                let p = Self::probs(&w, xi, classes);
                for c in 0..classes {
                    let e = p[c] - f64::from(u8::from(c == yi));
                    let row = &mut grad[c * (dim + 1)..(c + 1) * (dim + 1)];
                    for (g, v) in row.iter_mut().zip(xi.iter().chain([&1.0])) {
                        *g += e * v / n;
                    }
                }
            }
            for (wi, g) in w.iter_mut().zip(&grad) {
                *wi -= lr * (g + l2 * *wi);
            }
        }
        Logistic { classes, dim, w }
    }

    fn probs(w: &[f64], x: &[f64], classes: usize) -> Vec<f64> {
        let dim = x.len();
        let z: Vec<f64> = (0..classes)
            .map(|c| {
                let row = &w[c * (dim + 1)..(c + 1) * (dim + 1)];
                row[..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + row[dim]
            })
            .collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let p = Self::probs(&self.w, x, self.classes);
        (0..self.classes).fold(0, |best, c| if p[c] > p[best] { c } else { best })
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[usize]) -> f64 {
        let hits = x.iter().zip(y).filter(|(xi, &yi)| self.predict(xi) == yi).count();
        hits as f64 / x.len() as f64
    }
}

fn featurize(ds: &FeatureDataset, k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    ds.videos().iter().map(|v| (oracle_features(v, k), v.label)).unzip()
}

/// Oracle train and test accuracy of logistic regression on exact
/// bilinear features.
pub fn oracle_accuracy(train: &FeatureDataset, test: &FeatureDataset) -> (f64, f64) {
    let (xtr, ytr) = featurize(train, 3);
    let (xte, yte) = featurize(test, 3);
    let model = Logistic::fit(&xtr, &ytr, train.classes(), 1500, 2.0, 1e-4);
    (model.accuracy(&xtr, &ytr), model.accuracy(&xte, &yte))
}

/// Dense d × c² matrix of the tensor sketch built from its hash tables:
/// column `i·c + j` has `s₁(i)·s₂(j)` at row `(h₁(i) + h₂(j)) mod d`.
pub fn explicit_sketch_matrix(enc: &TensorSketchEncoder) -> Vec<Vec<f64>> {
    let (c, d) = (enc.input_dim(), enc.output_dim());
    let (h1, s1) = (enc.first().buckets(), enc.first().signs());
    let (h2, s2) = (enc.second().buckets(), enc.second().signs());
    let mut m = vec![vec![0.0; c * c]; d];
    for i in 0..c {
        for j in 0..c {
            m[(h1[i] + h2[j]) % d][i * c + j] += f64::from(s1[i]) * f64::from(s2[j]);
        }
    }
    m
}

pub fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

pub fn max_relative_gap(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Mean and standard error of ⟨TS(a), TS(b)⟩ over encoder seeds
/// `0..trials`, where TS treats each vector as a single-location map.
pub fn sketch_inner_product_stats(a: &[f64], b: &[f64], d: usize, trials: u64) -> (f64, f64) {
    let c = a.len();
    let ma = FeatureMap::from_dims(1, 1, c, a.to_vec()).unwrap();
    let mb = FeatureMap::from_dims(1, 1, c, b.to_vec()).unwrap();
    let samples: Vec<f64> = (0..trials)
        .map(|seed| {
            let enc = TensorSketchEncoder::new(c, d, seed).unwrap();
            let (ta, tb) = (enc.forward(&ma).unwrap(), enc.forward(&mb).unwrap());
            ta.values().iter().zip(tb.values()).map(|(x, y)| x * y).sum()
        })
        .collect();
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Fixed test vectors with a clearly nonzero inner product.
pub fn probe_pair() -> (Vec<f64>, Vec<f64>) {
    let a = vec![0.9, -0.4, 0.3, 0.7, -0.2, 0.5, 0.1, -0.6];
    let b = vec![0.8, -0.1, 0.6, 0.4, 0.3, 0.2, -0.5, -0.3];
    (a, b)
}
