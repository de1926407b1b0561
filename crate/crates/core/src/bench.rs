//! Dimension and timing comparison of full bilinear pooling against the
//! tensor-sketch projection.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bilinear::{bilinear_dim, bilinear_forward};
use crate::error::Result;
use crate::sketch::TensorSketchEncoder;
use crate::tensor::{FeatureMap, Shape};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub encoder: &'static str,
    pub dim: usize,
    pub classifier_params: usize,
    pub seconds_per_forward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub shape: Shape,
    pub classes: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn full_dim(&self) -> usize {
        self.rows[0].dim
    }

    pub fn compact_dim(&self) -> usize {
        self.rows[1].dim
    }

    pub fn to_text(&self) -> String {
        let c = self.shape.channels;
        let mut s = String::new();
        let _ = writeln!(s, "input feature map: {}", self.shape);
        let _ = writeln!(s, "full bilinear dimension: {} ({c} x {c})", self.full_dim());
        let _ = writeln!(s, "compact dimension: {}", self.compact_dim());
        let _ = writeln!(s, "{:<14} {:>10} {:>18} {:>14}", "encoder", "dim", "params@C", "ms/forward");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<14} {:>10} {:>18} {:>14.3}",
                r.encoder,
                r.dim,
                r.classifier_params,
                r.seconds_per_forward * 1e3
            );
        }
        let _ = writeln!(s, "(params@C = classifier weights for C = {} classes)", self.classes);
        s
    }
}

/// Times `reps` forward passes of each encoder on one random map.
pub fn run_bench(shape: Shape, compact_dim: usize, classes: usize, reps: usize, seed: u64) -> Result<BenchReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = FeatureMap::new(shape, (0..shape.len()).map(|_| rng.gen_range(0.0..1.0)).collect())?;
    let sketch = TensorSketchEncoder::new(shape.channels, compact_dim, seed)?;
    let reps = reps.max(1);

    let start = Instant::now();
    let mut full = 0;
    for _ in 0..reps {
        full = bilinear_forward(&x).dim();
    }
    let t_full = start.elapsed().as_secs_f64() / reps as f64;
    debug_assert_eq!(full, bilinear_dim(shape.channels));

    let start = Instant::now();
    let mut compact = 0;
    for _ in 0..reps {
        compact = sketch.forward(&x)?.dim();
    }
    let t_compact = start.elapsed().as_secs_f64() / reps as f64;

    Ok(BenchReport {
        shape,
        classes,
        rows: vec![
            BenchRow {
                encoder: "bilinear",
                dim: full,
                classifier_params: full * classes,
                seconds_per_forward: t_full,
            },
            BenchRow {
                encoder: "tensor_sketch",
                dim: compact,
                classifier_params: compact * classes,
                seconds_per_forward: t_compact,
            },
        ],
    })
}
