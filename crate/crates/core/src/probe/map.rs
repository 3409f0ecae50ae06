//! 11-point interpolated average precision.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapResult {
    /// Mean AP over classes with at least one positive.
    pub map: f64,
    /// `None` for classes without positives.
    pub per_class: Vec<Option<f64>>,
    pub excluded: Vec<usize>,
}

/// AP of one class: examples ranked by descending score, ties by ascending
/// index; mean over recall levels 0, 0.1, ..., 1 of the best precision
/// reached at or beyond that recall. `None` if there are no positives.
pub fn average_precision_11pt(
    scores: ArrayView1<'_, f64>,
    positives: ArrayView1<'_, bool>,
) -> Option<f64> {
    let n_pos = positives.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    // best[r] = max precision over cutoffs whose recall is at least r/10
    let mut best = [0.0f64; 11];
    let mut tp = 0usize;
    for (k, &i) in order.iter().enumerate() {
        if !positives[i] {
            continue;
        }
        tp += 1;
        let precision = tp as f64 / (k + 1) as f64;
        // recall tp/n_pos >= r/10  <=>  10 tp >= r n_pos
        for (r, b) in best.iter_mut().enumerate() {
            if 10 * tp >= r * n_pos {
                *b = b.max(precision);
            }
        }
    }
    Some(best.iter().sum::<f64>() / 11.0)
}

pub fn map_11pt(scores: ArrayView2<'_, f64>, labels: &Array2<bool>) -> Result<MapResult> {
    if scores.dim() != labels.dim() {
        return Err(Error::Dimension(format!(
            "scores are {:?} but labels are {:?}",
            scores.dim(),
            labels.dim()
        )));
    }
    let per_class: Vec<Option<f64>> = (0..scores.ncols())
        .map(|c| average_precision_11pt(scores.column(c), labels.column(c)))
        .collect();
    let excluded: Vec<usize> = (0..per_class.len())
        .filter(|&c| per_class[c].is_none())
        .collect();
    let aps: Vec<f64> = per_class.iter().flatten().copied().collect();
    if aps.is_empty() {
        return Err(Error::InsufficientData(
            "no class has a positive example".into(),
        ));
    }
    Ok(MapResult {
        map: aps.iter().sum::<f64>() / aps.len() as f64,
        per_class,
        excluded,
    })
}
