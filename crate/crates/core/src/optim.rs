//! SGD with momentum and L2 weight decay.

use crate::error::{Result, TleError};

/// One in-place update:
/// `buffer ← momentum·buffer + grad + weight_decay·param`, then
/// `param ← param − lr·buffer`.
pub fn sgd_update(
    params: &mut [f64],
    buffer: &mut [f64],
    grad: &[f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grad.len() || buffer.len() != grad.len() {
        return Err(TleError::LengthMismatch {
            expected: params.len(),
            found: if buffer.len() != params.len() { buffer.len() } else { grad.len() },
        });
    }
    for ((p, b), &g) in params.iter_mut().zip(buffer.iter_mut()).zip(grad) {
        *b = momentum * *b + g + weight_decay * *p;
        *p -= lr * *b;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = vec![0.3, -1.2];
        let mut b = vec![0.0; 2];
        sgd_update(&mut p, &mut b, &[0.0, 0.0], 0.5, 0.9, 0.0).unwrap();
        assert_eq!(p, vec![0.3, -1.2]);
        assert_eq!(b, vec![0.0, 0.0]);
    }

    #[test]
    fn single_step_arithmetic() {
        let mut p = vec![1.0];
        let mut b = vec![0.0];
        sgd_update(&mut p, &mut b, &[1.0], 0.1, 0.9, 0.0).unwrap();
        assert_eq!(b, vec![1.0]);
        assert!((p[0] - 0.9).abs() < 1e-15);
        // second step: buffer = 0.9 + 1 = 1.9
        sgd_update(&mut p, &mut b, &[1.0], 0.1, 0.9, 0.0).unwrap();
        assert!((b[0] - 1.9).abs() < 1e-15);
        assert!((p[0] - 0.71).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_enters_buffer() {
        let mut p = vec![2.0];
        let mut b = vec![0.0];
        sgd_update(&mut p, &mut b, &[0.0], 1.0, 0.9, 5e-4).unwrap();
        assert_eq!(b, vec![1e-3]);
        assert_eq!(p, vec![2.0 - 1e-3]);
    }

    #[test]
    fn length_mismatch() {
        let mut p = vec![0.0; 2];
        let mut b = vec![0.0; 2];
        assert!(sgd_update(&mut p, &mut b, &[0.0], 0.1, 0.9, 0.0).is_err());
    }
}
