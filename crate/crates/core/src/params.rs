//! Flattened model parameters and the arithmetic shared by training,
//! aggregation and the wire codec.

use std::cmp::Ordering;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamsError {
    #[error("shape mismatch: expected {expected} parameters, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("coefficient list has {coeffs} entries for {vectors} vectors")]
    CoefficientCount { vectors: usize, coeffs: usize },
    #[error("coefficients must be nonnegative with a positive sum")]
    BadCoefficients,
    #[error("shape must declare at least one nonempty tensor")]
    EmptyShape,
}

/// One dense tensor inside a flattened parameter vector, stored row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorShape {
    pub rows: usize,
    pub cols: usize,
}

impl TensorShape {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered tensor layout of a model.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ShapeSpec {
    tensors: Vec<TensorShape>,
    total_len: usize,
}

impl ShapeSpec {
    pub fn new(tensors: Vec<TensorShape>) -> Result<Self, ParamsError> {
        let total_len = tensors.iter().map(TensorShape::len).sum();
        if total_len == 0 {
            return Err(ParamsError::EmptyShape);
        }
        Ok(Self { tensors, total_len })
    }

    /// A single flat tensor of `len` entries. Used for vectors received off
    /// the wire, where only the length is known.
    pub fn flat(len: usize) -> Result<Self, ParamsError> {
        Self::new(vec![TensorShape { rows: 1, cols: len }])
    }

    pub fn tensors(&self) -> &[TensorShape] {
        &self.tensors
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    /// Start offset of every tensor in the flat layout.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.tensors
            .iter()
            .map(|t| {
                let start = acc;
                acc += t.len();
                start
            })
            .collect()
    }
}

/// Finite, shape-checked model parameters. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    values: Vec<f64>,
    shape: ShapeSpec,
}

impl WeightVector {
    pub fn new(values: Vec<f64>, shape: ShapeSpec) -> Result<Self, ParamsError> {
        if values.len() != shape.total_len() {
            return Err(ParamsError::ShapeMismatch {
                expected: shape.total_len(),
                actual: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(ParamsError::NonFinite { index });
        }
        Ok(Self { values, shape })
    }

    pub fn from_flat(values: Vec<f64>) -> Result<Self, ParamsError> {
        let shape = ShapeSpec::flat(values.len())?;
        Self::new(values, shape)
    }

    pub fn zeros(shape: ShapeSpec) -> Self {
        Self {
            values: vec![0.0; shape.total_len()],
            shape,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> &ShapeSpec {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Reinterprets the values under another layout with the same length.
    pub fn with_shape(self, shape: ShapeSpec) -> Result<Self, ParamsError> {
        Self::new(self.values, shape)
    }

    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    fn check_same_shape(&self, other: &Self) -> Result<(), ParamsError> {
        if self.shape != other.shape {
            return Err(ParamsError::ShapeMismatch {
                expected: self.shape.total_len(),
                actual: other.shape.total_len(),
            });
        }
        Ok(())
    }
}

/// Pairwise (tree) summation over a slice in index order.
pub(crate) fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

fn canonical_order(vectors: &[&WeightVector], coeffs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    order.sort_by(|&a, &b| {
        coeffs[a].total_cmp(&coeffs[b]).then_with(|| {
            vectors[a]
                .values
                .iter()
                .zip(&vectors[b].values)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
        })
    });
    order
}

/// Element-wise `Σ c_k·v_k / Σ c_k`.
///
/// Terms are put in a canonical order (by coefficient, then by contents)
/// before pairwise summation, so jointly permuting the inputs cannot change
/// a single bit of the result.
pub fn linear_combine(
    vectors: &[&WeightVector],
    coeffs: &[f64],
) -> Result<WeightVector, ParamsError> {
    let first = vectors.first().ok_or(ParamsError::EmptyInput)?;
    if coeffs.len() != vectors.len() {
        return Err(ParamsError::CoefficientCount {
            vectors: vectors.len(),
            coeffs: coeffs.len(),
        });
    }
    for v in &vectors[1..] {
        first.check_same_shape(v)?;
    }
    if let Some(index) = coeffs.iter().position(|c| !c.is_finite()) {
        return Err(ParamsError::NonFinite { index });
    }
    if coeffs.iter().any(|&c| c < 0.0) {
        return Err(ParamsError::BadCoefficients);
    }

    // c·v/c can round or overflow; one input is returned as is.
    if vectors.len() == 1 {
        if coeffs[0] <= 0.0 {
            return Err(ParamsError::BadCoefficients);
        }
        return Ok((*first).clone());
    }

    let order = canonical_order(vectors, coeffs);
    let sorted_coeffs: Vec<f64> = order.iter().map(|&k| coeffs[k]).collect();
    let total = pairwise_sum(&sorted_coeffs);
    if total <= 0.0 {
        return Err(ParamsError::BadCoefficients);
    }

    let mut terms = vec![0.0; vectors.len()];
    let values = (0..first.len())
        .map(|i| {
            for (slot, &k) in terms.iter_mut().zip(&order) {
                *slot = coeffs[k] * vectors[k].values[i];
            }
            pairwise_sum(&terms) / total
        })
        .collect();
    WeightVector::new(values, first.shape.clone())
}

/// Euclidean distance between two parameter vectors of the same shape.
pub fn l2_distance(a: &WeightVector, b: &WeightVector) -> Result<f64, ParamsError> {
    a.check_same_shape(b)?;
    let squares: Vec<f64> = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .collect();
    Ok(pairwise_sum(&squares).sqrt())
}
