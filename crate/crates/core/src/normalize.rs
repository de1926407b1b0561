//! Signed square root and L2 normalization applied to pooled features.

/// Clamp for the signed-sqrt derivative, capping it at `1 / (2ε) = 5·10⁵`.
pub const SIGNED_SQRT_EPS: f64 = 1e-6;
/// Norm floor for L2 normalization; all-zero inputs map to all-zero outputs.
pub const L2_EPS: f64 = 1e-12;

pub fn signed_sqrt(y: &[f64]) -> Vec<f64> {
    y.iter().map(|&v| v.signum() * v.abs().sqrt()).collect()
}

pub fn signed_sqrt_backward(y: &[f64], upstream: &[f64]) -> Vec<f64> {
    debug_assert_eq!(y.len(), upstream.len());
    y.iter()
        .zip(upstream)
        .map(|(&v, &g)| g / (2.0 * v.abs().sqrt().max(SIGNED_SQRT_EPS)))
        .collect()
}

pub fn l2_norm(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn l2_normalize(z: &[f64]) -> Vec<f64> {
    let n = l2_norm(z).max(L2_EPS);
    z.iter().map(|v| v / n).collect()
}

/// Pulls `upstream` back through `z ↦ z / max(‖z‖, ε)`.
pub fn l2_normalize_backward(z: &[f64], upstream: &[f64]) -> Vec<f64> {
    debug_assert_eq!(z.len(), upstream.len());
    let norm = l2_norm(z);
    if norm <= L2_EPS {
        return upstream.iter().map(|g| g / L2_EPS).collect();
    }
    let dot: f64 = z.iter().zip(upstream).map(|(a, b)| a * b).sum();
    let n3 = norm * norm * norm;
    z.iter()
        .zip(upstream)
        .map(|(&zi, &gi)| gi / norm - zi * dot / n3)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_diff;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
    }

    #[test]
    fn signed_sqrt_examples() {
        assert_eq!(signed_sqrt(&[4.0, -9.0, 0.0]), vec![2.0, -3.0, 0.0]);
        assert_eq!(signed_sqrt_backward(&[4.0], &[1.0]), vec![0.25]);
        assert_eq!(signed_sqrt_backward(&[0.0], &[1.0]), vec![5e5]);
    }

    #[test]
    fn signed_sqrt_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let y: Vec<f64> = (0..8)
                .map(|_| {
                    let m = rng.gen_range(0.1..3.0);
                    if rng.gen() { m } else { -m }
                })
                .collect();
            let up: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = signed_sqrt_backward(&y, &up);
            let n = finite_diff(|v| signed_sqrt(v).iter().zip(&up).map(|(p, q)| p * q).sum(), &y, 1e-5).unwrap();
            for (a, n) in a.iter().zip(&n) {
                assert!(rel(*a, *n) <= 1e-6);
            }
        }
    }

    #[test]
    fn l2_examples() {
        let z = l2_normalize(&[3.0, 4.0]);
        assert!((z[0] - 0.6).abs() < 1e-15 && (z[1] - 0.8).abs() < 1e-15);
        assert_eq!(l2_normalize(&[0.0, 0.0, 0.0]), vec![0.0; 3]);
    }

    #[test]
    fn l2_unit_norm_scale_invariance_and_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let z: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let out = l2_normalize(&z);
            assert!((l2_norm(&out) - 1.0).abs() <= 1e-12);
            let alpha = rng.gen_range(0.01..100.0);
            let scaled: Vec<f64> = z.iter().map(|v| v * alpha).collect();
            for (p, q) in l2_normalize(&scaled).iter().zip(&out) {
                assert!((p - q).abs() <= 1e-12);
            }
            let up: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = l2_normalize_backward(&z, &up);
            let n = finite_diff(|v| l2_normalize(v).iter().zip(&up).map(|(p, q)| p * q).sum(), &z, 1e-5).unwrap();
            for (a, n) in a.iter().zip(&n) {
                assert!(rel(*a, *n) <= 1e-6, "{a} {n}");
            }
        }
    }
}
