use ndarray::{ArrayView1, ArrayView2, Axis};

use super::{LabelVector, LogitMatrix, ProbMatrix};
use crate::error::{Error, Result};

/// Anything that holds one score per (example, class).
pub trait ClassScores {
    fn scores(&self) -> ArrayView2<'_, f64>;
}

impl ClassScores for LogitMatrix {
    fn scores(&self) -> ArrayView2<'_, f64> {
        self.values().view()
    }
}

impl ClassScores for ProbMatrix {
    fn scores(&self) -> ArrayView2<'_, f64> {
        self.values().view()
    }
}

/// Top-1 class index per example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Predictions(Vec<usize>);

impl Predictions {
    pub fn new(classes: Vec<usize>) -> Self {
        Predictions(classes)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Smallest index attaining the row maximum.
pub(crate) fn argmax_row(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Per-row argmax, ties resolved toward the smallest class index.
pub fn top1<S: ClassScores + ?Sized>(scores: &S) -> Predictions {
    Predictions(scores.scores().axis_iter(Axis(0)).map(argmax_row).collect())
}

/// Per-example top-1 correctness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectnessVector(Vec<bool>);

impl CorrectnessVector {
    pub fn new(bits: Vec<bool>) -> Self {
        CorrectnessVector(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn count_correct(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }

    /// Fraction of correct examples; 0 for an empty vector.
    pub fn accuracy(&self) -> f64 {
        if self.0.is_empty() {
            0.0
        } else {
            self.count_correct() as f64 / self.0.len() as f64
        }
    }

    pub fn complement(&self) -> CorrectnessVector {
        CorrectnessVector(self.0.iter().map(|b| !b).collect())
    }
}

impl FromIterator<bool> for CorrectnessVector {
    fn from_iter<I: IntoIterator<Item = bool>>(iter: I) -> Self {
        CorrectnessVector(iter.into_iter().collect())
    }
}

pub fn correctness(preds: &Predictions, labels: &LabelVector) -> Result<CorrectnessVector> {
    if preds.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    Ok(preds
        .0
        .iter()
        .zip(labels.as_slice())
        .map(|(p, l)| p == l)
        .collect())
}

pub fn accuracy(corr: &CorrectnessVector) -> f64 {
    corr.accuracy()
}
