//! Temperature scaling: `softmax(z / T)` with `T` chosen to minimize the
//! negative log-likelihood of the labels.
//!
//! The fit is a golden-section search over `ln T`. NLL is convex in `1/T`,
//! hence unimodal in `ln T`, so a bracketing search needs no derivatives.

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{LabelVector, LogitMatrix, ProbMatrix};
use crate::error::{Error, Result};
use crate::par;

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

const ROWS_PER_TASK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Temperature(f64);

impl Temperature {
    pub const ONE: Temperature = Temperature(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value.is_finite() {
            Ok(Temperature(value))
        } else {
            Err(Error::Domain(format!(
                "temperature must be positive, got {value}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub t_min: f64,
    pub t_max: f64,
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            t_min: 0.005,
            t_max: 10.0,
            tolerance: 1e-4,
            max_iters: 200,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_min > 0.0 && self.t_min < self.t_max && self.t_max.is_finite()) {
            return Err(Error::Config(format!(
                "invalid temperature interval [{}, {}]",
                self.t_min, self.t_max
            )));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::Config(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Writes `softmax(row * inv_t)` into `out`.
pub(crate) fn softmax_into(row: ArrayView1<'_, f64>, inv_t: f64, out: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(row.iter()) {
        *o = ((z - max) * inv_t).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Row-wise softmax of `values * inv_t`.
pub(crate) fn softmax_rows(values: &Array2<f64>, inv_t: f64) -> Array2<f64> {
    let (n, c) = values.dim();
    let mut out = vec![0.0; n * c];
    if c > 0 {
        par::for_each_chunk_mut(&mut out, ROWS_PER_TASK * c, |chunk_idx, chunk| {
            let first = chunk_idx * ROWS_PER_TASK;
            for (k, dst) in chunk.chunks_mut(c).enumerate() {
                softmax_into(values.row(first + k), inv_t, dst);
            }
        });
    }
    Array2::from_shape_vec((n, c), out).expect("shape")
}

/// Temperature-scaled probabilities `softmax(z / T)`.
pub fn softmax_t(logits: &LogitMatrix, t: Temperature) -> ProbMatrix {
    ProbMatrix::from_normalized(softmax_rows(logits.values(), 1.0 / t.value()))
}

/// Mean negative log-likelihood of the labels, probabilities floored at
/// [`PROB_FLOOR`].
pub fn nll(probs: &ProbMatrix, labels: &LabelVector) -> Result<f64> {
    labels.check_pairing(probs.n_examples(), probs.n_classes())?;
    let n = probs.n_examples();
    if n == 0 {
        return Ok(0.0);
    }
    let total: f64 = probs
        .values()
        .axis_iter(Axis(0))
        .zip(labels.as_slice())
        .map(|(row, &y)| -row[y].max(PROB_FLOOR).ln())
        .sum();
    Ok(total / n as f64)
}

/// NLL of `softmax(z / T)` computed through log-sum-exp, without
/// materializing the probability matrix.
pub fn nll_at(logits: &LogitMatrix, labels: &LabelVector, t: Temperature) -> Result<f64> {
    labels.check_pairing(logits.n_examples(), logits.n_classes())?;
    Ok(nll_unchecked(logits, labels, 1.0 / t.value()))
}

fn nll_unchecked(logits: &LogitMatrix, labels: &LabelVector, inv_t: f64) -> f64 {
    Centered::new(logits, labels).nll(inv_t)
}

/// Logits shifted so each row's maximum is zero, with the label entry pulled
/// out. Repeated NLL evaluations then cost one exp per entry.
struct Centered {
    shifted: Vec<f64>,
    label_shifted: Vec<f64>,
    n_classes: usize,
}

impl Centered {
    fn new(logits: &LogitMatrix, labels: &LabelVector) -> Self {
        let z = logits.values();
        let n_classes = logits.n_classes();
        let mut shifted = Vec::with_capacity(z.len());
        let mut label_shifted = Vec::with_capacity(z.nrows());
        for (row, &y) in z.axis_iter(Axis(0)).zip(labels.as_slice()) {
            let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
            shifted.extend(row.iter().map(|v| v - max));
            label_shifted.push(row[y] - max);
        }
        Centered {
            shifted,
            label_shifted,
            n_classes,
        }
    }

    fn nll(&self, inv_t: f64) -> f64 {
        let n = self.label_shifted.len();
        if n == 0 {
            return 0.0;
        }
        let c = self.n_classes;
        let log_floor = PROB_FLOOR.ln();
        let partial = par::map_range(n.div_ceil(ROWS_PER_TASK), |task| {
            let lo = task * ROWS_PER_TASK;
            let hi = (lo + ROWS_PER_TASK).min(n);
            let mut acc = 0.0;
            for i in lo..hi {
                let sum: f64 = self.shifted[i * c..(i + 1) * c]
                    .iter()
                    .map(|&v| (v * inv_t).exp())
                    .sum();
                let logp = self.label_shifted[i] * inv_t - sum.ln();
                acc -= logp.max(log_floor);
            }
            acc
        });
        partial.iter().sum::<f64>() / n as f64
    }
}

/// Outcome of a temperature fit with its audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub temperature: Temperature,
    /// NLL at `T = 1`.
    pub nll_before: f64,
    /// NLL at the fitted temperature.
    pub nll_after: f64,
    /// The minimum sits on an interval endpoint (NLL monotone over the interval).
    pub at_boundary: bool,
    /// Every `(T, nll)` the search evaluated, in evaluation order.
    pub evaluations: Vec<(f64, f64)>,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

pub fn fit_temperature(
    logits: &LogitMatrix,
    labels: &LabelVector,
    cfg: &CalibrationConfig,
) -> Result<TemperatureFit> {
    cfg.validate()?;
    labels.check_pairing(logits.n_examples(), logits.n_classes())?;

    let centered = Centered::new(logits, labels);
    let mut evaluations: Vec<(f64, f64)> = Vec::new();
    let mut eval = |u: f64| {
        let t = u.exp();
        let f = centered.nll(1.0 / t);
        evaluations.push((t, f));
        f
    };

    let (lo, hi) = (cfg.t_min.ln(), cfg.t_max.ln());
    eval(lo);
    eval(hi);

    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = eval(c);
    let mut fd = eval(d);
    // Stop well inside the tolerance so rescaled problems agree to it.
    let target = cfg.tolerance / 8.0;
    let mut iters = 0;
    while b.exp() - a.exp() > target && iters < cfg.max_iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = eval(d);
        }
        iters += 1;
    }
    let at_boundary = a == lo || b == hi;

    let nll_before = centered.nll(1.0);
    if cfg.t_min <= 1.0 && 1.0 <= cfg.t_max {
        evaluations.push((1.0, nll_before));
    }

    let (t_best, f_best) =
        evaluations
            .iter()
            .copied()
            .fold((f64::NAN, f64::INFINITY), |best, cand| {
                if cand.1 < best.1 {
                    cand
                } else {
                    best
                }
            });
    if !f_best.is_finite() {
        return Err(Error::Numeric(
            "negative log-likelihood is not finite".into(),
        ));
    }
    // Endpoints come back exactly as configured, not via exp(ln(t)).
    let t_best = if at_boundary && a == lo && (t_best.ln() - lo).abs() < 1e-12 {
        cfg.t_min
    } else if at_boundary && b == hi && (t_best.ln() - hi).abs() < 1e-12 {
        cfg.t_max
    } else {
        t_best
    }
    .clamp(cfg.t_min, cfg.t_max);

    Ok(TemperatureFit {
        temperature: Temperature::new(t_best)?,
        nll_before,
        nll_after: f_best,
        at_boundary,
        evaluations,
    })
}
