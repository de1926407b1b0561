//! Full bilinear pooling: the sum over spatial locations of channel-vector
//! outer products, vectorized column by column into a `c²` descriptor.

use crate::error::{Result, TleError};
use crate::tensor::{EncodedVector, FeatureMap};

/// Output dimension of bilinear pooling over `channels` channels.
pub fn bilinear_dim(channels: usize) -> usize {
    channels * channels
}

pub fn bilinear_forward(x: &FeatureMap) -> EncodedVector {
    let c = x.shape().channels;
    let mut gram = vec![0.0; c * c];
    for m in x.flatten_spatial().iter_rows() {
        // column j holds m * m[j]
        for (j, &mj) in m.iter().enumerate() {
            let col = &mut gram[j * c..(j + 1) * c];
            for (g, &mi) in col.iter_mut().zip(m) {
                *g += mi * mj;
            }
        }
    }
    EncodedVector::from_raw(gram)
}

/// Gradient with respect to the input map; location `ℓ` receives `(G + Gᵀ)·m_ℓ`
/// with `G` the upstream gradient reshaped to `c × c`.
pub fn bilinear_backward(x: &FeatureMap, upstream: &EncodedVector) -> Result<FeatureMap> {
    let shape = x.shape();
    let c = shape.channels;
    if upstream.dim() != c * c {
        return Err(TleError::LengthMismatch {
            expected: c * c,
            found: upstream.dim(),
        });
    }
    let g = upstream.values();
    // symmetric part S = G + Gᵀ, stored column-major like G
    let mut sym = vec![0.0; c * c];
    for j in 0..c {
        for i in 0..c {
            sym[j * c + i] = g[j * c + i] + g[i * c + j];
        }
    }
    let mut out = Vec::with_capacity(shape.len());
    for m in x.flatten_spatial().iter_rows() {
        for i in 0..c {
            let mut acc = 0.0;
            for (j, &mj) in m.iter().enumerate() {
                acc += sym[j * c + i] * mj;
            }
            out.push(acc);
        }
    }
    FeatureMap::new(shape, out)
}
