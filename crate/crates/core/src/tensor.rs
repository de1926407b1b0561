//! Dense feature-map storage.
//!
//! A [`FeatureMap`] holds one `h × w × c` convolutional block in
//! location-major order: the element at `(row, col, channel)` lives at
//! `((row * w) + col) * c + channel`. Because every spatial location is a
//! contiguous run of `c` values, the `(h·w) × c` matrix view used by the
//! pooling encoders is a plain borrow of the underlying buffer.

use std::fmt;

use crate::error::{Result, TleError};

/// Spatial extent and channel count of a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, channels: usize) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(TleError::InvalidArgument(format!(
                "feature map dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        Ok(Shape {
            height,
            width,
            channels,
        })
    }

    pub fn locations(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        debug_assert!(row < self.height && col < self.width && channel < self.channels);
        (row * self.width + col) * self.channels + channel
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(TleError::NonFinite { index }),
        None => Ok(()),
    }
}

/// One segment's convolutional feature block.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    shape: Shape,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(TleError::LengthMismatch {
                expected: shape.len(),
                found: values.len(),
            });
        }
        check_finite(&values)?;
        Ok(FeatureMap { shape, values })
    }

    pub fn from_dims(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(Shape::new(height, width, channels)?, values)
    }

    pub fn zeros(shape: Shape) -> Self {
        FeatureMap {
            shape,
            values: vec![0.0; shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        assert!(value.is_finite());
        FeatureMap {
            shape,
            values: vec![value; shape.len()],
        }
    }

    /// Builds a map from values already known to be finite and correctly sized.
    pub(crate) fn from_raw(shape: Shape, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), shape.len());
        FeatureMap { shape, values }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.values[self.shape.index(row, col, channel)]
    }

    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(TleError::NonFinite {
                index: self.shape.index(row, col, channel),
            });
        }
        let idx = self.shape.index(row, col, channel);
        self.values[idx] = value;
        Ok(())
    }

    /// `(h·w) × c` view; row `ℓ` is the channel vector at spatial location `ℓ`.
    pub fn flatten_spatial(&self) -> SpatialMatrix<'_> {
        SpatialMatrix {
            rows: self.shape.locations(),
            cols: self.shape.channels,
            data: &self.values,
        }
    }

    pub fn elementwise(&self, other: &FeatureMap, op: ElementwiseOp) -> Result<FeatureMap> {
        if self.shape != other.shape {
            return Err(TleError::shape(self.shape, other.shape));
        }
        let f: fn(f64, f64) -> f64 = match op {
            ElementwiseOp::Add => |a, b| a + b,
            ElementwiseOp::Mul => |a, b| a * b,
            ElementwiseOp::Max => f64::max,
        };
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect::<Vec<_>>();
        check_finite(&values)?;
        Ok(FeatureMap::from_raw(self.shape, values))
    }
}

/// Element-wise binary operation shared by the aggregation functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Mul,
    Max,
}

/// Borrowed `(h·w) × c` location-major matrix.
#[derive(Debug, Clone, Copy)]
pub struct SpatialMatrix<'a> {
    rows: usize,
    cols: usize,
    data: &'a [f64],
}

impl<'a> SpatialMatrix<'a> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, location: usize) -> &'a [f64] {
        &self.data[location * self.cols..(location + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &'a [f64]> + 'a {
        self.data.chunks_exact(self.cols)
    }

    pub fn as_slice(&self) -> &'a [f64] {
        self.data
    }

    /// Inverse of [`FeatureMap::flatten_spatial`].
    pub fn to_feature_map(&self, height: usize, width: usize) -> Result<FeatureMap> {
        if height * width != self.rows {
            return Err(TleError::shape(
                format!("{} locations", self.rows),
                format!("{height}x{width}"),
            ));
        }
        FeatureMap::from_dims(height, width, self.cols, self.data.to_vec())
    }
}

/// Output of an encoding layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedVector {
    values: Vec<f64>,
}

impl EncodedVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(TleError::InvalidArgument("encoded vector must be nonempty".into()));
        }
        check_finite(&values)?;
        Ok(EncodedVector { values })
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        EncodedVector { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}
