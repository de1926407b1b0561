//! Classifier head, softmax cross-entropy, and the fully-connected pooling
//! encoder.

use crate::error::{Result, TleError};
use crate::tensor::{EncodedVector, FeatureMap};

/// Dense row-major affine map `out = W·x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Parameter gradients of an [`Affine`] layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl AffineGrads {
    pub fn zeros_like(layer: &Affine) -> Self {
        AffineGrads {
            weights: vec![0.0; layer.weights.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }

    pub fn add_assign(&mut self, other: &AffineGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights.iter_mut().chain(self.bias.iter_mut()).for_each(|v| *v *= factor);
    }
}

impl Affine {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Affine {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    pub fn from_parts(rows: usize, cols: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(TleError::InvalidArgument("affine layer dimensions must be positive".into()));
        }
        if weights.len() != rows * cols {
            return Err(TleError::LengthMismatch {
                expected: rows * cols,
                found: weights.len(),
            });
        }
        if bias.len() != rows {
            return Err(TleError::LengthMismatch {
                expected: rows,
                found: bias.len(),
            });
        }
        if let Some(index) = weights.iter().chain(&bias).position(|v| !v.is_finite()) {
            return Err(TleError::NonFinite { index });
        }
        Ok(Affine {
            rows,
            cols,
            weights,
            bias,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.weights, &mut self.bias)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(TleError::DimensionMismatch(format!(
                "layer expects {} inputs, got {}",
                self.cols,
                x.len()
            )));
        }
        Ok(self
            .weights
            .chunks_exact(self.cols)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect())
    }

    /// Returns the input gradient and the parameter gradients.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, AffineGrads)> {
        if x.len() != self.cols || upstream.len() != self.rows {
            return Err(TleError::DimensionMismatch(format!(
                "layer {}x{} got input {} and upstream {}",
                self.rows,
                self.cols,
                x.len(),
                upstream.len()
            )));
        }
        let mut dx = vec![0.0; self.cols];
        let mut dw = Vec::with_capacity(self.weights.len());
        for (row, &g) in self.weights.chunks_exact(self.cols).zip(upstream) {
            for (d, w) in dx.iter_mut().zip(row) {
                *d += w * g;
            }
            dw.extend(x.iter().map(|v| v * g));
        }
        Ok((
            dx,
            AffineGrads {
                weights: dw,
                bias: upstream.to_vec(),
            },
        ))
    }
}

/// Linear classifier over encoded features: `C` rows by `d` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    layer: Affine,
}

impl ClassifierHead {
    /// Zero-initialized head; its logits are uniform until trained.
    pub fn zeros(classes: usize, dim: usize) -> Result<Self> {
        if classes < 2 {
            return Err(TleError::InvalidArgument(format!("need at least 2 classes, got {classes}")));
        }
        if dim == 0 {
            return Err(TleError::InvalidArgument("feature dimension must be positive".into()));
        }
        Ok(ClassifierHead {
            layer: Affine::zeros(classes, dim),
        })
    }

    pub fn from_layer(layer: Affine) -> Result<Self> {
        if layer.rows() < 2 {
            return Err(TleError::InvalidArgument(format!("need at least 2 classes, got {}", layer.rows())));
        }
        Ok(ClassifierHead { layer })
    }

    pub fn classes(&self) -> usize {
        self.layer.rows()
    }

    pub fn dim(&self) -> usize {
        self.layer.cols()
    }

    pub fn layer(&self) -> &Affine {
        &self.layer
    }

    pub(crate) fn layer_mut(&mut self) -> &mut Affine {
        &mut self.layer
    }

    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.layer.forward(features)
    }
}

/// Fully-connected pooling: an affine map of the flattened `h·w·c` map.
#[derive(Debug, Clone, PartialEq)]
pub struct FcEncoder {
    layer: Affine,
}

impl FcEncoder {
    pub fn new(layer: Affine) -> Self {
        FcEncoder { layer }
    }

    pub fn layer(&self) -> &Affine {
        &self.layer
    }

    pub(crate) fn layer_mut(&mut self) -> &mut Affine {
        &mut self.layer
    }

    pub fn output_dim(&self) -> usize {
        self.layer.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.layer.cols()
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<EncodedVector> {
        Ok(EncodedVector::from_raw(self.layer.forward(x.values())?))
    }

    pub fn backward(&self, x: &FeatureMap, upstream: &EncodedVector) -> Result<(FeatureMap, AffineGrads)> {
        let (dx, grads) = self.layer.backward(x.values(), upstream.values())?;
        Ok((FeatureMap::new(x.shape(), dx)?, grads))
    }
}

pub fn fc_encode(x: &FeatureMap, encoder: &FcEncoder) -> Result<EncodedVector> {
    encoder.forward(x)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of `softmax(logits)` against `label`, with its gradient.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(TleError::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    let log_sum = max + sum.ln();
    let loss = log_sum - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Arg-max with ties broken towards the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
