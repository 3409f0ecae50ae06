//! Linear probes on frozen embeddings, trained with L-BFGS.
//!
//! [`fit_probe`] fits a multinomial logistic regression for each value of an
//! L2 grid on a seeded training split, keeps the value with the best holdout
//! accuracy (ties go to the smaller value) and refits on all examples.
//! [`fit_multilabel_probe`] does the same with one-vs-rest binary probes
//! scored by holdout 11-point mAP. Weights start at zero, so results do not
//! depend on anything but the data, the grid and the split seed.

pub mod lbfgs;
pub mod logistic;
pub mod map;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use lbfgs::{lbfgs_minimize, LbfgsConfig, LbfgsResult};
pub use map::{average_precision_11pt, map_11pt, MapResult};

use crate::data::{top1, EmbeddingMatrix, LabelVector, Predictions};
use crate::error::{Error, Result};
use crate::features::concat_columns;
use crate::par;
use logistic::{with_bias, Binary, Multinomial};

/// `1e-6, 1e-5, ..., 1e1`.
pub fn default_l2_grid() -> Vec<f64> {
    (-6..=1).map(|e| 10f64.powi(e)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub l2_grid: Vec<f64>,
    pub holdout_fraction: f64,
    /// Seeds the train/holdout split.
    pub seed: u64,
    pub lbfgs: LbfgsConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            l2_grid: default_l2_grid(),
            holdout_fraction: 0.2,
            seed: 0,
            lbfgs: LbfgsConfig::default(),
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l2_grid.is_empty() {
            return Err(Error::Config("the l2 grid is empty".into()));
        }
        if let Some(v) = self.l2_grid.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Config(format!(
                "l2 value {v} must be finite and nonnegative"
            )));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config(format!(
                "holdout fraction {} must lie in [0, 1)",
                self.holdout_fraction
            )));
        }
        if self.holdout_fraction == 0.0 && self.l2_grid.len() > 1 {
            return Err(Error::Config(
                "choosing among several l2 values needs a holdout split".into(),
            ));
        }
        self.lbfgs.validate()
    }
}

/// Seeded split into sorted `(train, holdout)` index lists.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_hold = (fraction * n as f64).round() as usize;
    if fraction > 0.0 && n >= 2 {
        n_hold = n_hold.clamp(1, n - 1);
    }
    let mut hold = idx[..n_hold].to_vec();
    let mut train = idx[n_hold..].to_vec();
    hold.sort_unstable();
    train.sort_unstable();
    (train, hold)
}

fn rows(x: ArrayView2<'_, f64>, idx: &[usize]) -> Array2<f64> {
    x.select(Axis(0), idx)
}

/// Runs L-BFGS; a line search that stalls near the optimum keeps its last
/// iterate and is reported as not converged.
fn minimize<F>(mut eval: F, x0: Vec<f64>, cfg: &LbfgsConfig) -> Result<(Vec<f64>, f64, usize, bool)>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    match lbfgs_minimize(&mut eval, x0, cfg) {
        Ok(r) => Ok((r.x, r.f, r.iterations, r.converged)),
        Err(Error::LineSearch {
            iterations,
            value,
            iterate,
        }) => Ok((iterate, value, iterations, false)),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub n_classes: usize,
    pub n_features: usize,
    /// Row-major `n_classes x (n_features + 1)`, bias last in each row.
    pub weights: Vec<f64>,
    pub l2_strength: f64,
    /// Regularized mean loss at the returned weights.
    pub train_objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl ProbeModel {
    pub fn weight_matrix(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.n_classes, self.n_features + 1), &self.weights)
            .expect("weight shape")
    }

    fn check_dims(&self, features: &EmbeddingMatrix) -> Result<()> {
        if features.n_dims() != self.n_features {
            return Err(Error::Dimension(format!(
                "probe expects {} features, got {}",
                self.n_features,
                features.n_dims()
            )));
        }
        Ok(())
    }

    /// Class logits, `N x n_classes`.
    pub fn scores(&self, features: &EmbeddingMatrix) -> Result<Array2<f64>> {
        self.check_dims(features)?;
        Ok(with_bias(features.view()).dot(&self.weight_matrix().t()))
    }

    pub fn predict(&self, features: &EmbeddingMatrix) -> Result<Predictions> {
        let s = self.scores(features)?;
        Ok(top1(&crate::data::LogitMatrix::new(s)?))
    }

    pub fn accuracy(&self, features: &EmbeddingMatrix, labels: &LabelVector) -> Result<f64> {
        let p = self.predict(features)?;
        Ok(crate::data::correctness(&p, labels)?.accuracy())
    }
}

/// Fits one multinomial probe at a fixed `l2`, optionally from a given start.
pub fn train_probe(
    features: &EmbeddingMatrix,
    labels: &LabelVector,
    n_classes: usize,
    l2: f64,
    lbfgs: &LbfgsConfig,
    init: Option<&[f64]>,
) -> Result<ProbeModel> {
    labels.check_pairing(features.n_examples(), n_classes)?;
    let x = with_bias(features.view());
    train_on(&x, labels.as_slice(), n_classes, l2, lbfgs, init)
}

fn train_on(
    x: &Array2<f64>,
    labels: &[usize],
    n_classes: usize,
    l2: f64,
    lbfgs: &LbfgsConfig,
    init: Option<&[f64]>,
) -> Result<ProbeModel> {
    let obj = Multinomial {
        x,
        labels,
        n_classes,
        l2,
    };
    let x0 = match init {
        Some(w) if w.len() == obj.n_params() => w.to_vec(),
        Some(w) => {
            return Err(Error::Dimension(format!(
                "initial weights have length {}, expected {}",
                w.len(),
                obj.n_params()
            )))
        }
        None => vec![0.0; obj.n_params()],
    };
    let (weights, f, iterations, converged) = minimize(|w, g| obj.eval(w, g), x0, lbfgs)?;
    Ok(ProbeModel {
        n_classes,
        n_features: x.ncols() - 1,
        weights,
        l2_strength: l2,
        train_objective_value: f,
        iterations,
        converged,
    })
}

/// Audit entry for one grid value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub l2: f64,
    /// Holdout accuracy, or holdout mAP for multi-label probes.
    pub holdout_score: f64,
    pub train_objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeFit {
    /// Refit on all examples at the selected l2.
    pub model: ProbeModel,
    pub selected_l2: f64,
    /// Holdout accuracy of the selected grid value (before refitting).
    pub holdout_accuracy: f64,
    pub grid: Vec<GridPoint>,
    pub n_train: usize,
    pub n_holdout: usize,
}

fn select_best(grid: &[GridPoint]) -> usize {
    (1..grid.len()).fold(0, |b, i| {
        let (gi, gb) = (&grid[i], &grid[b]);
        if gi.holdout_score > gb.holdout_score
            || (gi.holdout_score == gb.holdout_score && gi.l2 < gb.l2)
        {
            i
        } else {
            b
        }
    })
}

pub fn fit_probe(
    features: &EmbeddingMatrix,
    labels: &LabelVector,
    cfg: &ProbeConfig,
) -> Result<ProbeFit> {
    cfg.validate()?;
    let n_classes = labels.min_classes().max(2);
    labels.check_pairing(features.n_examples(), n_classes)?;
    let x = with_bias(features.view());
    let (train, hold) = holdout_split(labels.len(), cfg.holdout_fraction, cfg.seed);
    let mut seen = vec![false; n_classes];
    train.iter().for_each(|&i| seen[labels.get(i)] = true);
    if let Some(class) = seen.iter().position(|s| !s) {
        return Err(Error::Stratification { class });
    }
    let x_train = rows(x.view(), &train);
    let y_train = labels.subset(&train);
    let x_hold = rows(x.view(), &hold);
    let y_hold = labels.subset(&hold);
    let grid: Vec<GridPoint> = par::map_slice(&cfg.l2_grid, |&l2| -> Result<GridPoint> {
        let m = train_on(
            &x_train,
            y_train.as_slice(),
            n_classes,
            l2,
            &cfg.lbfgs,
            None,
        )?;
        let holdout_score = if hold.is_empty() {
            f64::NAN
        } else {
            let s = x_hold.dot(&m.weight_matrix().t());
            let p = top1(&crate::data::LogitMatrix::new(s)?);
            crate::data::correctness(&p, &y_hold)?.accuracy()
        };
        Ok(GridPoint {
            l2,
            holdout_score,
            train_objective: m.train_objective_value,
            iterations: m.iterations,
            converged: m.converged,
        })
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let best = select_best(&grid);
    let selected_l2 = grid[best].l2;
    let model = train_on(
        &x,
        labels.as_slice(),
        n_classes,
        selected_l2,
        &cfg.lbfgs,
        None,
    )?;
    Ok(ProbeFit {
        model,
        selected_l2,
        holdout_accuracy: grid[best].holdout_score,
        grid,
        n_train: train.len(),
        n_holdout: hold.len(),
    })
}

/// One-vs-rest binary probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLabelProbe {
    pub n_classes: usize,
    pub n_features: usize,
    pub l2_strength: f64,
    /// `n_features + 1` weights per fitted class, bias last; `None` for
    /// skipped classes.
    pub weights: Vec<Option<Vec<f64>>>,
    /// Classes with no positives or no negatives.
    pub skipped: Vec<usize>,
}

impl MultiLabelProbe {
    /// `N x n_classes` logits; columns of skipped classes are zero.
    pub fn scores(&self, features: &EmbeddingMatrix) -> Result<Array2<f64>> {
        if features.n_dims() != self.n_features {
            return Err(Error::Dimension(format!(
                "probe expects {} features, got {}",
                self.n_features,
                features.n_dims()
            )));
        }
        let x = with_bias(features.view());
        let mut out = Array2::zeros((x.nrows(), self.n_classes));
        for (c, w) in self.weights.iter().enumerate() {
            if let Some(w) = w {
                out.column_mut(c)
                    .assign(&x.dot(&ndarray::ArrayView1::from(w.as_slice())));
            }
        }
        Ok(out)
    }

    /// 11-point mAP over the fitted classes.
    pub fn mean_ap(&self, features: &EmbeddingMatrix, labels: &Array2<bool>) -> Result<MapResult> {
        let s = self.scores(features)?;
        let mut masked = labels.clone();
        for &c in &self.skipped {
            masked.column_mut(c).fill(false);
        }
        map_11pt(s.view(), &masked)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLabelFit {
    pub model: MultiLabelProbe,
    pub selected_l2: f64,
    pub holdout_map: f64,
    pub grid: Vec<GridPoint>,
    pub n_train: usize,
    pub n_holdout: usize,
}

fn fit_binary(
    x: &Array2<f64>,
    targets: ndarray::ArrayView1<'_, bool>,
    l2: f64,
    lbfgs: &LbfgsConfig,
) -> Result<(Vec<f64>, f64, usize, bool)> {
    let obj = Binary { x, targets, l2 };
    minimize(|w, g| obj.eval(w, g), vec![0.0; obj.n_params()], lbfgs)
}

pub fn fit_multilabel_probe(
    features: &EmbeddingMatrix,
    label_matrix: &Array2<bool>,
    cfg: &ProbeConfig,
) -> Result<MultiLabelFit> {
    cfg.validate()?;
    let (n, n_classes) = label_matrix.dim();
    if n != features.n_examples() {
        return Err(Error::Dimension(format!(
            "{} label rows but {} examples",
            n,
            features.n_examples()
        )));
    }
    let skipped: Vec<usize> = (0..n_classes)
        .filter(|&c| {
            let pos = label_matrix.column(c).iter().filter(|&&v| v).count();
            pos == 0 || pos == n
        })
        .collect();
    let fitted: Vec<usize> = (0..n_classes).filter(|c| !skipped.contains(c)).collect();
    if fitted.is_empty() {
        return Err(Error::Degenerate(
            "every class is all-positive or all-negative".into(),
        ));
    }
    let x = with_bias(features.view());
    let (train, hold) = holdout_split(n, cfg.holdout_fraction, cfg.seed);
    let x_train = rows(x.view(), &train);
    let y_train = label_matrix.select(Axis(0), &train);
    let x_hold = rows(x.view(), &hold);
    let mut y_hold = label_matrix.select(Axis(0), &hold);
    for &c in &skipped {
        y_hold.column_mut(c).fill(false);
    }
    let n_fit = fitted.len();
    let jobs = par::map_range(cfg.l2_grid.len() * n_fit, |j| {
        let (gi, ci) = (j / n_fit, fitted[j % n_fit]);
        fit_binary(&x_train, y_train.column(ci), cfg.l2_grid[gi], &cfg.lbfgs)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut grid = Vec::with_capacity(cfg.l2_grid.len());
    for (gi, &l2) in cfg.l2_grid.iter().enumerate() {
        let fits = &jobs[gi * n_fit..(gi + 1) * n_fit];
        let holdout_score = if hold.is_empty() {
            f64::NAN
        } else {
            let mut s = Array2::zeros((hold.len(), n_classes));
            for (k, &c) in fitted.iter().enumerate() {
                s.column_mut(c)
                    .assign(&x_hold.dot(&ndarray::ArrayView1::from(fits[k].0.as_slice())));
            }
            map_11pt(s.view(), &y_hold)?.map
        };
        grid.push(GridPoint {
            l2,
            holdout_score,
            train_objective: fits.iter().map(|f| f.1).sum(),
            iterations: fits.iter().map(|f| f.2).max().unwrap_or(0),
            converged: fits.iter().all(|f| f.3),
        });
    }
    let best = select_best(&grid);
    let selected_l2 = grid[best].l2;
    let finals = par::map_slice(&fitted, |&c| {
        fit_binary(&x, label_matrix.column(c), selected_l2, &cfg.lbfgs)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut weights = vec![None; n_classes];
    for (&c, f) in fitted.iter().zip(finals) {
        weights[c] = Some(f.0);
    }
    Ok(MultiLabelFit {
        model: MultiLabelProbe {
            n_classes,
            n_features: features.n_dims(),
            l2_strength: selected_l2,
            weights,
            skipped,
        },
        selected_l2,
        holdout_map: grid[best].holdout_score,
        grid,
        n_train: train.len(),
        n_holdout: hold.len(),
    })
}

/// Probe on the full column-concatenation of several embeddings.
pub fn stacked_probe(
    embeddings: &[&EmbeddingMatrix],
    labels: &LabelVector,
    cfg: &ProbeConfig,
) -> Result<ProbeFit> {
    fit_probe(&concat_columns(embeddings)?, labels, cfg)
}

pub fn stacked_multilabel_probe(
    embeddings: &[&EmbeddingMatrix],
    label_matrix: &Array2<bool>,
    cfg: &ProbeConfig,
) -> Result<MultiLabelFit> {
    fit_multilabel_probe(&concat_columns(embeddings)?, label_matrix, cfg)
}
