use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Finds the first non-finite entry in row-major order.
pub(crate) fn first_non_finite(values: &ArrayView2<f64>) -> Option<(usize, usize, f64)> {
    values
        .indexed_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|((r, c), v)| (r, c, *v))
}

fn require_finite(values: &ArrayView2<f64>, what: &str) -> Result<()> {
    match first_non_finite(values) {
        Some((r, c, v)) => Err(Error::Data(format!(
            "{what} has non-finite value {v} at row {r}, column {c}"
        ))),
        None => Ok(()),
    }
}

/// Raw per-class scores of one model, `n_examples x n_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix(Array2<f64>);

impl LogitMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(Error::Data("logit matrix has no examples".into()));
        }
        if values.ncols() < 2 {
            return Err(Error::Data(format!(
                "logit matrix needs at least 2 classes, got {}",
                values.ncols()
            )));
        }
        require_finite(&values.view(), "logit matrix")?;
        Ok(LogitMatrix(values))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::new(super::load_tensor(path)?)
    }

    pub fn n_examples(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.0.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Logits divided by `divisor` (temperature scaling without the softmax).
    pub fn divided_by(&self, divisor: f64) -> LogitMatrix {
        LogitMatrix(&self.0 / divisor)
    }

    /// Logits multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> LogitMatrix {
        LogitMatrix(&self.0 * factor)
    }
}

/// Row-stochastic matrix of class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix(Array2<f64>);

impl ProbMatrix {
    pub const ROW_SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(Error::Data("probability matrix has no classes".into()));
        }
        require_finite(&values.view(), "probability matrix")?;
        for (i, row) in values.axis_iter(Axis(0)).enumerate() {
            if let Some(v) = row.iter().find(|v| **v < 0.0) {
                return Err(Error::Data(format!("negative probability {v} in row {i}")));
            }
            let s = row.sum();
            if (s - 1.0).abs() > Self::ROW_SUM_TOLERANCE {
                return Err(Error::Data(format!("row {i} sums to {s}, not 1")));
            }
        }
        Ok(ProbMatrix(values))
    }

    /// Wraps values already known to be row-stochastic.
    pub(crate) fn from_normalized(values: Array2<f64>) -> Self {
        debug_assert!(values
            .axis_iter(Axis(0))
            .all(|r| (r.sum() - 1.0).abs() <= Self::ROW_SUM_TOLERANCE));
        ProbMatrix(values)
    }

    pub fn n_examples(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.0.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.0.row(i)
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Pre-logit features, `n_examples x n_dims`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix(Array2<f64>);

impl EmbeddingMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(Error::Data("embedding has zero dimensions".into()));
        }
        require_finite(&values.view(), "embedding")?;
        Ok(EmbeddingMatrix(values))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::new(super::load_tensor(path)?)
    }

    pub fn n_examples(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_dims(&self) -> usize {
        self.0.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// Ground-truth class index per example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector(Vec<usize>);

impl LabelVector {
    pub fn new(labels: Vec<usize>) -> Self {
        LabelVector(labels)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn get(&self, i: usize) -> usize {
        self.0[i]
    }

    /// Smallest class count compatible with every label (max label + 1).
    pub fn min_classes(&self) -> usize {
        self.0.iter().max().map_or(0, |m| m + 1)
    }

    /// Checks pairing with a matrix of shape `(n_examples, n_classes)`.
    pub fn check_pairing(&self, n_examples: usize, n_classes: usize) -> Result<()> {
        if self.0.len() != n_examples {
            return Err(Error::Dimension(format!(
                "{} labels for {} examples",
                self.0.len(),
                n_examples
            )));
        }
        if let Some((i, l)) = self.0.iter().enumerate().find(|(_, l)| **l >= n_classes) {
            return Err(Error::Data(format!(
                "label {l} at example {i} is out of range for {n_classes} classes"
            )));
        }
        Ok(())
    }

    /// Labels restricted to the given example indices.
    pub fn subset(&self, idx: &[usize]) -> LabelVector {
        LabelVector(idx.iter().map(|&i| self.0[i]).collect())
    }
}

impl From<Vec<usize>> for LabelVector {
    fn from(v: Vec<usize>) -> Self {
        LabelVector(v)
    }
}
