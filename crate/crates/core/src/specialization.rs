//! The confidence angle θ between two models and its aggregations.
//!
//! θ is the angle of the point `(conf2, conf1)` measured from the conf2
//! axis: above 45° model 1 is the more confident one.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{top1, ClassGroups, LabelVector, ProbMatrix};
use crate::error::{Error, Result};
use crate::pairwise::JointCounts;
use crate::par;

/// Joint correctness of one example under a model pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JointCategory {
    Both,
    Only1,
    Only2,
    Neither,
}

impl JointCategory {
    pub const ALL: [JointCategory; 4] = [
        JointCategory::Both,
        JointCategory::Only1,
        JointCategory::Only2,
        JointCategory::Neither,
    ];

    /// Histogram filter used when none is given: every example on which the
    /// pair is not jointly correct.
    pub const DEFAULT_FILTER: [JointCategory; 3] = [
        JointCategory::Only1,
        JointCategory::Only2,
        JointCategory::Neither,
    ];

    pub fn of(correct1: bool, correct2: bool) -> Self {
        match (correct1, correct2) {
            (true, true) => JointCategory::Both,
            (true, false) => JointCategory::Only1,
            (false, true) => JointCategory::Only2,
            (false, false) => JointCategory::Neither,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JointCategory::Both => "BOTH",
            JointCategory::Only1 => "ONLY1",
            JointCategory::Only2 => "ONLY2",
            JointCategory::Neither => "NEITHER",
        }
    }

    pub fn swapped(self) -> Self {
        match self {
            JointCategory::Only1 => JointCategory::Only2,
            JointCategory::Only2 => JointCategory::Only1,
            c => c,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for JointCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for JointCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        JointCategory::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown category {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaRecord {
    pub example_index: usize,
    pub conf1: f64,
    pub conf2: f64,
    pub theta_deg: f64,
    pub category: JointCategory,
}

/// Per-example max probability.
pub fn confidence(probs: &ProbMatrix) -> Vec<f64> {
    let v = probs.values();
    par::map_range(v.nrows(), |i| {
        v.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    })
}

// Angles above 45 are taken as the complement of the swapped pair so that
// swapping the models maps θ to exactly 90 - θ.
fn angle(c1: f64, c2: f64) -> f64 {
    if c1 == c2 {
        45.0
    } else if c1 < c2 {
        c1.atan2(c2).to_degrees()
    } else {
        90.0 - c2.atan2(c1).to_degrees()
    }
}

/// θ in degrees for each pair of confidences.
pub fn theta(conf1: &[f64], conf2: &[f64]) -> Result<Vec<f64>> {
    if conf1.len() != conf2.len() {
        return Err(Error::Dimension(format!(
            "confidence vectors have lengths {} and {}",
            conf1.len(),
            conf2.len()
        )));
    }
    if let Some((i, (a, b))) = conf1
        .iter()
        .zip(conf2)
        .enumerate()
        .find(|(_, (a, b))| !(**a > 0.0 && **b > 0.0 && a.is_finite() && b.is_finite()))
    {
        return Err(Error::Domain(format!(
            "confidences at example {i} are ({a}, {b}); both must be positive"
        )));
    }
    Ok(conf1
        .iter()
        .zip(conf2)
        .map(|(&a, &b)| angle(a, b))
        .collect())
}

/// One record per example from two calibrated probability matrices.
pub fn theta_records(
    p1: &ProbMatrix,
    p2: &ProbMatrix,
    labels: &LabelVector,
) -> Result<Vec<ThetaRecord>> {
    if p1.values().dim() != p2.values().dim() {
        return Err(Error::Dimension(format!(
            "probability shapes {:?} and {:?} differ",
            p1.values().dim(),
            p2.values().dim()
        )));
    }
    labels.check_pairing(p1.n_examples(), p1.n_classes())?;
    let (c1, c2) = (confidence(p1), confidence(p2));
    let th = theta(&c1, &c2)?;
    let (y1, y2) = (top1(p1), top1(p2));
    Ok((0..labels.len())
        .map(|i| {
            let y = labels.get(i);
            ThetaRecord {
                example_index: i,
                conf1: c1[i],
                conf2: c2[i],
                theta_deg: th[i],
                category: JointCategory::of(y1.as_slice()[i] == y, y2.as_slice()[i] == y),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaHistogram {
    /// `bins + 1` uniform edges over [0, 90].
    pub bin_edges: Vec<f64>,
    pub categories: Vec<JointCategory>,
    /// `counts[b][k]` counts records of `categories[k]` in bin `b`.
    pub counts: Vec<Vec<usize>>,
    pub n_total: usize,
}

impl ThetaHistogram {
    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    /// Column of counts for one category, if it was histogrammed.
    pub fn category_counts(&self, cat: JointCategory) -> Option<Vec<usize>> {
        let k = self.categories.iter().position(|&c| c == cat)?;
        Some(self.counts.iter().map(|row| row[k]).collect())
    }
}

/// Bin of `theta` among `bins` uniform bins over [0, 90]; 90 lands in the last.
pub fn theta_bin(theta: f64, bins: usize) -> usize {
    ((theta / 90.0 * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

/// Histograms the records whose category is in `filter`
/// (default [`JointCategory::DEFAULT_FILTER`]).
pub fn theta_histogram(
    records: &[ThetaRecord],
    bins: usize,
    filter: Option<&[JointCategory]>,
) -> Result<ThetaHistogram> {
    if bins < 2 {
        return Err(Error::Config(format!("need at least 2 bins, got {bins}")));
    }
    let mut cats: Vec<JointCategory> = filter.unwrap_or(&JointCategory::DEFAULT_FILTER).to_vec();
    cats.sort();
    cats.dedup();
    let mut counts = vec![vec![0usize; cats.len()]; bins];
    let mut n_total = 0;
    for r in records {
        if let Some(k) = cats.iter().position(|&c| c == r.category) {
            counts[theta_bin(r.theta_deg, bins)][k] += 1;
            n_total += 1;
        }
    }
    let bin_edges = (0..=bins).map(|b| 90.0 * b as f64 / bins as f64).collect();
    Ok(ThetaHistogram {
        bin_edges,
        categories: cats,
        counts,
        n_total,
    })
}

/// Smallest model-1 confidence that guarantees model 1's top-1 class wins an
/// equal-weight probability average against a model-2 confidence of `conf2`.
///
/// Model 1's class `a` beats model 2's class `b` when
/// `conf1 + p2(a) > p1(b) + conf2`; with `p2(a) >= 0` and
/// `p1(b) <= 1 - conf1`, `conf1 > (1 + conf2) / 2` suffices.
pub fn dominance_threshold(conf2: f64) -> f64 {
    (1.0 + conf2) / 2.0
}

/// θ of the point on the dominance boundary for a given `conf2`.
pub fn dominance_theta(conf2: f64) -> f64 {
    angle(dominance_threshold(conf2), conf2)
}

/// How records are keyed in [`per_class_specialization`].
#[derive(Debug, Clone, Copy)]
pub enum Grouping<'a> {
    PerClass,
    Groups(&'a ClassGroups),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecializationRow {
    /// Class id as a string, or the group name.
    pub key: String,
    /// Class id, or index of the group.
    pub id: usize,
    pub count: usize,
    pub mean_theta: Option<f64>,
    pub counts: JointCounts,
    /// Mean θ within each category, in [`JointCategory::ALL`] order.
    pub mean_theta_by_category: [Option<f64>; 4],
}

#[derive(Default, Clone)]
struct Acc {
    n: [usize; 4],
    sum: [f64; 4],
}

impl Acc {
    fn add(&mut self, r: &ThetaRecord) {
        let k = r.category.index();
        self.n[k] += 1;
        self.sum[k] += r.theta_deg;
    }

    fn row(&self, key: String, id: usize) -> SpecializationRow {
        let count: usize = self.n.iter().sum();
        let total: f64 = self.sum.iter().sum();
        let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
        SpecializationRow {
            key,
            id,
            count,
            mean_theta: mean(total, count),
            counts: JointCounts {
                both: self.n[0],
                only1: self.n[1],
                only2: self.n[2],
                neither: self.n[3],
            },
            mean_theta_by_category: std::array::from_fn(|k| mean(self.sum[k], self.n[k])),
        }
    }
}

/// Aggregates records by true class, or by class group. Per-class rows cover
/// only classes that occur; group rows cover every group, and examples outside
/// all groups are left out.
pub fn per_class_specialization(
    records: &[ThetaRecord],
    labels: &LabelVector,
    grouping: Grouping<'_>,
) -> Result<Vec<SpecializationRow>> {
    if records.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} records but {} labels",
            records.len(),
            labels.len()
        )));
    }
    if let Some(r) = records.iter().find(|r| r.example_index >= labels.len()) {
        return Err(Error::Dimension(format!(
            "record for example {} is outside {} labels",
            r.example_index,
            labels.len()
        )));
    }
    match grouping {
        Grouping::PerClass => {
            let n_keys = labels.as_slice().iter().max().map_or(0, |m| m + 1);
            let mut acc = vec![Acc::default(); n_keys];
            for r in records {
                acc[labels.get(r.example_index)].add(r);
            }
            Ok(acc
                .iter()
                .enumerate()
                .filter(|(_, a)| a.n.iter().sum::<usize>() > 0)
                .map(|(c, a)| a.row(c.to_string(), c))
                .collect())
        }
        Grouping::Groups(groups) => {
            let mut acc = vec![Acc::default(); groups.len()];
            for r in records {
                if let Some(g) = groups.group_of(labels.get(r.example_index)) {
                    acc[g].add(r);
                }
            }
            Ok(acc
                .iter()
                .zip(groups.groups())
                .enumerate()
                .map(|(i, (a, g))| a.row(g.name.clone(), i))
                .collect())
        }
    }
}
