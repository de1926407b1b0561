//! Temporal aggregation of K segment feature maps into one map.

use std::fmt;
use std::str::FromStr;

use crate::error::{Result, TleError};
use crate::tensor::{ElementwiseOp, FeatureMap, Shape};

/// Element-wise function combining the K segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AggregationMode {
    Average,
    Maximum,
    Product,
}

impl AggregationMode {
    pub const ALL: [AggregationMode; 3] = [
        AggregationMode::Average,
        AggregationMode::Maximum,
        AggregationMode::Product,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AggregationMode::Average => "average",
            AggregationMode::Maximum => "maximum",
            AggregationMode::Product => "product",
        }
    }
}

impl fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AggregationMode {
    type Err = TleError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "average" | "avg" | "mean" => Ok(AggregationMode::Average),
            "maximum" | "max" => Ok(AggregationMode::Maximum),
            "product" | "prod" | "mul" | "multiplication" => Ok(AggregationMode::Product),
            other => Err(TleError::InvalidArgument(format!("unknown aggregation mode `{other}`"))),
        }
    }
}

/// K ≥ 2 feature maps of identical shape, one per temporal segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSet {
    segments: Vec<FeatureMap>,
}

impl SegmentSet {
    pub fn new(segments: Vec<FeatureMap>) -> Result<Self> {
        if segments.len() < 2 {
            return Err(TleError::InvalidArgument(format!(
                "a segment set needs at least 2 segments, got {}",
                segments.len()
            )));
        }
        let shape = segments[0].shape();
        if let Some(bad) = segments.iter().find(|s| s.shape() != shape) {
            return Err(TleError::shape(shape, bad.shape()));
        }
        Ok(SegmentSet { segments })
    }

    pub fn k(&self) -> usize {
        self.segments.len()
    }

    pub fn shape(&self) -> Shape {
        self.segments[0].shape()
    }

    pub fn segments(&self) -> &[FeatureMap] {
        &self.segments
    }

    pub fn into_segments(self) -> Vec<FeatureMap> {
        self.segments
    }
}

/// Combines the segments element-wise according to `mode`.
pub fn aggregate_forward(set: &SegmentSet, mode: AggregationMode) -> Result<FeatureMap> {
    let segs = set.segments();
    let mut acc = segs[0].clone();
    match mode {
        AggregationMode::Average => {
            for s in &segs[1..] {
                acc = acc.elementwise(s, ElementwiseOp::Add)?;
            }
            let k = segs.len() as f64;
            let values = acc.into_values().into_iter().map(|v| v / k).collect();
            Ok(FeatureMap::from_raw(set.shape(), values))
        }
        AggregationMode::Maximum => {
            for s in &segs[1..] {
                acc = acc.elementwise(s, ElementwiseOp::Max)?;
            }
            Ok(acc)
        }
        AggregationMode::Product => {
            for s in &segs[1..] {
                acc = acc.elementwise(s, ElementwiseOp::Mul)?;
            }
            Ok(acc)
        }
    }
}

/// Gradient of the aggregation with respect to each segment.
///
/// Product mode uses leave-one-out products built from prefix and suffix
/// products, so zeros in the inputs never cause a division. Maximum mode
/// routes the whole upstream gradient to the lowest-index arg-max segment.
pub fn aggregate_backward(
    set: &SegmentSet,
    mode: AggregationMode,
    upstream: &FeatureMap,
) -> Result<Vec<FeatureMap>> {
    let shape = set.shape();
    if upstream.shape() != shape {
        return Err(TleError::shape(shape, upstream.shape()));
    }
    let k = set.k();
    let n = shape.len();
    let segs = set.segments();
    let dx = upstream.values();
    let mut grads = vec![vec![0.0; n]; k];

    match mode {
        AggregationMode::Average => {
            let kf = k as f64;
            for g in &mut grads {
                for (gi, &d) in g.iter_mut().zip(dx) {
                    *gi = d / kf;
                }
            }
        }
        AggregationMode::Maximum => {
            for i in 0..n {
                let mut best = 0;
                for (j, s) in segs.iter().enumerate().skip(1) {
                    if s.values()[i] > segs[best].values()[i] {
                        best = j;
                    }
                }
                grads[best][i] = dx[i];
            }
        }
        AggregationMode::Product => {
            let mut prefix = vec![1.0; n];
            for (j, s) in segs.iter().enumerate() {
                for ((g, p), &d) in grads[j].iter_mut().zip(&prefix).zip(dx) {
                    *g = p * d;
                }
                for (p, &v) in prefix.iter_mut().zip(s.values()) {
                    *p *= v;
                }
            }
            let mut suffix = vec![1.0; n];
            for j in (0..k).rev() {
                for (g, &sf) in grads[j].iter_mut().zip(&suffix) {
                    *g *= sf;
                }
                for (sf, &v) in suffix.iter_mut().zip(segs[j].values()) {
                    *sf *= v;
                }
            }
        }
    }

    grads
        .into_iter()
        .map(|g| FeatureMap::new(shape, g))
        .collect()
}
