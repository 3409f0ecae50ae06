//! Combining calibrated models: weighted probability or logit averaging,
//! single-parameter and class-aware interpolation between two members, and
//! greedy forward selection of ensemble members.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::calibration::{softmax_rows, softmax_t, Temperature};
use crate::data::{correctness, top1, CorrectnessVector, LabelVector, LogitMatrix, ProbMatrix};
use crate::error::{Error, Result};
use crate::par;

pub use crate::data::{ClassGroup, ClassGroups};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    /// Weighted mean of calibrated probabilities.
    #[default]
    AvgProb,
    /// Weighted mean of temperature-scaled logits, then softmax.
    AvgLogit,
}

impl std::str::FromStr for EnsembleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "avg_prob" | "prob" => Ok(EnsembleMode::AvgProb),
            "avg_logit" | "logit" => Ok(EnsembleMode::AvgLogit),
            other => Err(Error::Config(format!("unknown ensemble mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for EnsembleMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EnsembleMode::AvgProb => "avg_prob",
            EnsembleMode::AvgLogit => "avg_logit",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub mode: EnsembleMode,
    /// Per-member weights summing to 1; equal weights when absent.
    pub weights: Option<Vec<f64>>,
}

impl EnsembleConfig {
    pub fn with_mode(mode: EnsembleMode) -> Self {
        EnsembleConfig {
            mode,
            weights: None,
        }
    }
}

/// A model after temperature scaling: its scaled logits `z / T` and the
/// matching probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedModel {
    name: String,
    temperature: Temperature,
    scaled_logits: Array2<f64>,
    probs: ProbMatrix,
}

impl CalibratedModel {
    pub fn new(name: impl Into<String>, logits: &LogitMatrix, temperature: Temperature) -> Self {
        CalibratedModel {
            name: name.into(),
            temperature,
            scaled_logits: logits.divided_by(temperature.value()).into_inner(),
            probs: softmax_t(logits, temperature),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn temperature(&self) -> Temperature {
        self.temperature
    }

    pub fn probs(&self) -> &ProbMatrix {
        &self.probs
    }

    pub fn scaled_logits(&self) -> &Array2<f64> {
        &self.scaled_logits
    }

    pub fn n_examples(&self) -> usize {
        self.probs.n_examples()
    }

    pub fn n_classes(&self) -> usize {
        self.probs.n_classes()
    }

    pub fn correctness(&self, labels: &LabelVector) -> Result<CorrectnessVector> {
        correctness(&top1(&self.probs), labels)
    }
}

fn check_shapes(members: &[&CalibratedModel]) -> Result<(usize, usize)> {
    let first = members
        .first()
        .ok_or_else(|| Error::Config("ensemble needs at least one member".into()))?;
    let dim = (first.n_examples(), first.n_classes());
    for m in members {
        if (m.n_examples(), m.n_classes()) != dim {
            return Err(Error::Dimension(format!(
                "member {} has shape {:?}, expected {:?}",
                m.name(),
                (m.n_examples(), m.n_classes()),
                dim
            )));
        }
    }
    Ok(dim)
}

fn resolve_weights(n: usize, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    match weights {
        None => Ok(vec![1.0 / n as f64; n]),
        Some(w) => {
            if w.len() != n {
                return Err(Error::Config(format!(
                    "{} weights for {n} members",
                    w.len()
                )));
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Config(
                    "weights must be finite and nonnegative".into(),
                ));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("weights sum to {s}, not 1")));
            }
            Ok(w.to_vec())
        }
    }
}

fn normalize_rows(mut m: Array2<f64>) -> ProbMatrix {
    for mut row in m.rows_mut() {
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    ProbMatrix::from_normalized(m)
}

fn finish(blended: Array2<f64>, mode: EnsembleMode) -> ProbMatrix {
    match mode {
        EnsembleMode::AvgProb => normalize_rows(blended),
        EnsembleMode::AvgLogit => ProbMatrix::from_normalized(softmax_rows(&blended, 1.0)),
    }
}

fn source(m: &CalibratedModel, mode: EnsembleMode) -> &Array2<f64> {
    match mode {
        EnsembleMode::AvgProb => m.probs.values(),
        EnsembleMode::AvgLogit => &m.scaled_logits,
    }
}

/// Weighted combination of calibrated members.
pub fn ensemble(members: &[&CalibratedModel], cfg: &EnsembleConfig) -> Result<ProbMatrix> {
    let (n, c) = check_shapes(members)?;
    let weights = resolve_weights(members.len(), cfg.weights.as_deref())?;
    if members.len() == 1 {
        return Ok(members[0].probs.clone());
    }
    let mut acc = Array2::<f64>::zeros((n, c));
    for (m, &w) in members.iter().zip(&weights) {
        acc.scaled_add(w, source(m, cfg.mode));
    }
    Ok(finish(acc, cfg.mode))
}

/// Number of examples the ensemble classifies correctly.
pub fn ensemble_correct(
    members: &[&CalibratedModel],
    labels: &LabelVector,
    cfg: &EnsembleConfig,
) -> Result<CorrectnessVector> {
    let p = ensemble(members, cfg)?;
    correctness(&top1(&p), labels)
}

fn check_t(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "interpolation parameter {t} outside [0, 1]"
        )))
    }
}

/// Two-member ensemble with weights `(1 - t, t)`.
pub fn interpolate_pair(
    m1: &CalibratedModel,
    m2: &CalibratedModel,
    t: f64,
    mode: EnsembleMode,
) -> Result<ProbMatrix> {
    check_t(t)?;
    ensemble(
        &[m1, m2],
        &EnsembleConfig {
            mode,
            weights: Some(vec![1.0 - t, t]),
        },
    )
}

/// Per-column interpolation: columns of the first group take weight `1 - t`
/// toward `m1`, columns of the second group take weight `t`, all other
/// columns are averaged equally. At `t = 0` the first group's columns come
/// entirely from `m1` and the second group's from `m2`.
pub fn class_aware_interpolate(
    m1: &CalibratedModel,
    m2: &CalibratedModel,
    groups: &ClassGroups,
    t: f64,
    mode: EnsembleMode,
) -> Result<ProbMatrix> {
    check_t(t)?;
    let (n, c) = check_shapes(&[m1, m2])?;
    groups.validate(c)?;
    if groups.len() != 2 {
        return Err(Error::Config(format!(
            "class-aware interpolation needs exactly two groups, got {}",
            groups.len()
        )));
    }
    let w1: Vec<f64> = (0..c)
        .map(|k| match groups.group_of(k) {
            Some(0) => 1.0 - t,
            Some(_) => t,
            None => 0.5,
        })
        .collect();
    let (a, b) = (source(m1, mode), source(m2, mode));
    let mut out = Array2::<f64>::zeros((n, c));
    for ((mut o, ra), rb) in out.rows_mut().into_iter().zip(a.rows()).zip(b.rows()) {
        for k in 0..c {
            o[k] = 0.0 + w1[k] * ra[k] + (1.0 - w1[k]) * rb[k];
        }
    }
    Ok(finish(out, mode))
}

/// Accuracy of [`interpolate_pair`] at each `t`.
pub fn interpolation_sweep(
    m1: &CalibratedModel,
    m2: &CalibratedModel,
    labels: &LabelVector,
    ts: &[f64],
    mode: EnsembleMode,
    groups: Option<&ClassGroups>,
) -> Result<Vec<(f64, f64)>> {
    par::map_slice(ts, |&t| {
        let p = match groups {
            Some(g) => class_aware_interpolate(m1, m2, g, t, mode)?,
            None => interpolate_pair(m1, m2, t, mode)?,
        };
        Ok((t, correctness(&top1(&p), labels)?.accuracy()))
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyConfig {
    pub k_max: usize,
    pub mode: EnsembleMode,
    pub stop_on_no_gain: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyStep {
    pub added: String,
    pub accuracy: f64,
    pub n_correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyTrace {
    pub base: String,
    pub base_accuracy: f64,
    pub mode: EnsembleMode,
    pub steps: Vec<GreedyStep>,
    pub pool: Vec<String>,
    /// Selection stopped before `k_max` because no candidate improved accuracy.
    pub stopped_early: bool,
}

/// Members in canonical (name) order, so the same set always sums in the
/// same order no matter how it was assembled.
pub(crate) fn canonical(mut members: Vec<&CalibratedModel>) -> Vec<&CalibratedModel> {
    members.sort_by(|a, b| a.name().cmp(b.name()));
    members
}

pub(crate) fn count_correct_equal_weight(
    members: Vec<&CalibratedModel>,
    labels: &LabelVector,
    mode: EnsembleMode,
) -> Result<usize> {
    let members = canonical(members);
    Ok(ensemble_correct(&members, labels, &EnsembleConfig::with_mode(mode))?.count_correct())
}

/// Greedy forward selection: starting from `base`, repeatedly add the pool
/// model that maximizes equal-weight ensemble accuracy. Ties go to the
/// lexicographically smallest name; each pool model is used at most once.
pub fn greedy_select(
    base: &CalibratedModel,
    pool: &[CalibratedModel],
    labels: &LabelVector,
    cfg: &GreedyConfig,
) -> Result<GreedyTrace> {
    if pool.is_empty() {
        return Err(Error::Config(
            "greedy selection needs a nonempty pool".into(),
        ));
    }
    if cfg.k_max > pool.len() {
        return Err(Error::Config(format!(
            "k_max {} exceeds pool size {}",
            cfg.k_max,
            pool.len()
        )));
    }
    let mut names: Vec<&str> = pool.iter().map(CalibratedModel::name).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) || names.contains(&base.name()) {
        return Err(Error::Config(
            "pool names must be unique and exclude the base".into(),
        ));
    }
    let mut all: Vec<&CalibratedModel> = vec![base];
    all.extend(pool.iter());
    check_shapes(&all)?;
    labels.check_pairing(base.n_examples(), base.n_classes())?;

    let n = labels.len() as f64;
    let mut current = base.correctness(labels)?.count_correct();
    let base_accuracy = current as f64 / n;
    let mut chosen: Vec<&CalibratedModel> = vec![base];
    let mut remaining: Vec<&CalibratedModel> = pool.iter().collect();
    let mut steps = Vec::new();
    let mut stopped_early = false;

    for _ in 0..cfg.k_max {
        let scores: Vec<Result<usize>> = par::map_slice(&remaining, |cand| {
            let mut members = chosen.clone();
            members.push(cand);
            count_correct_equal_weight(members, labels, cfg.mode)
        });
        let mut best: Option<(usize, usize)> = None;
        for (i, s) in scores.into_iter().enumerate() {
            let s = s?;
            best = match best {
                None => Some((i, s)),
                Some((bi, bs)) => {
                    let better = s > bs || (s == bs && remaining[i].name() < remaining[bi].name());
                    Some(if better { (i, s) } else { (bi, bs) })
                }
            };
        }
        let (bi, bs) = best.expect("remaining is nonempty");
        if cfg.stop_on_no_gain && bs <= current {
            stopped_early = true;
            break;
        }
        let pick = remaining.remove(bi);
        chosen.push(pick);
        current = bs;
        steps.push(GreedyStep {
            added: pick.name().to_string(),
            accuracy: bs as f64 / n,
            n_correct: bs,
        });
    }

    Ok(GreedyTrace {
        base: base.name().to_string(),
        base_accuracy,
        mode: cfg.mode,
        steps,
        pool: names.into_iter().map(str::to_string).collect(),
        stopped_early,
    })
}

/// Elementwise check that two probability matrices agree within `tol`.
pub fn max_abs_diff(a: &ProbMatrix, b: &ProbMatrix) -> f64 {
    let mut m = 0.0f64;
    Zip::from(a.values())
        .and(b.values())
        .for_each(|x, y| m = m.max((x - y).abs()));
    m
}
