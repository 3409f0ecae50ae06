//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iters: usize,
    /// Converged once the gradient's largest absolute entry is at most this.
    pub grad_tolerance: f64,
    pub c1: f64,
    pub c2: f64,
    /// Trial steps per line search, bracketing and zooming combined.
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            max_iters: 500,
            grad_tolerance: 1e-6,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::Config(format!(
                "line search needs 0 < c1 < c2 < 1, got c1 = {}, c2 = {}",
                self.c1, self.c2
            )));
        }
        if self.memory == 0 || self.max_line_search == 0 {
            return Err(Error::Config(
                "memory and max_line_search must be at least 1".into(),
            ));
        }
        if self.grad_tolerance.is_nan() || self.grad_tolerance < 0.0 {
            return Err(Error::Config("grad_tolerance must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_inf_norm: f64,
    /// Objective after each accepted step, starting with `f(x0)`.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(g: &[f64]) -> f64 {
    g.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Probe {
    f: f64,
    g: Vec<f64>,
    dphi: f64,
}

/// Evaluates along `x + a d`.
struct Line<'a, F> {
    eval: &'a mut F,
    x: &'a [f64],
    d: &'a [f64],
    buf: Vec<f64>,
    evals: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Line<'_, F> {
    fn at(&mut self, a: f64) -> Probe {
        self.evals += 1;
        for ((b, x), d) in self.buf.iter_mut().zip(self.x).zip(self.d) {
            *b = x + a * d;
        }
        let mut g = vec![0.0; self.x.len()];
        let f = (self.eval)(&self.buf, &mut g);
        let dphi = dot(&g, self.d);
        if f.is_finite() && dphi.is_finite() {
            Probe { f, g, dphi }
        } else {
            // treated as an overshoot
            Probe {
                f: f64::INFINITY,
                g,
                dphi: f64::INFINITY,
            }
        }
    }
}

/// Minimizer of the cubic through two points with slopes, or `None` when it
/// is not well defined.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> Option<f64> {
    if !(fa.is_finite() && fb.is_finite() && da.is_finite() && db.is_finite()) {
        return None;
    }
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    t.is_finite().then_some(t)
}

struct Accepted {
    step: f64,
    probe: Probe,
}

/// Strong-Wolfe line search: bracketing then zoom with safeguarded cubic
/// interpolation. Falls back to the best sufficient-decrease point found if
/// the curvature condition cannot be met within the trial budget.
fn line_search<F: FnMut(&[f64], &mut [f64]) -> f64>(
    line: &mut Line<'_, F>,
    f0: f64,
    dphi0: f64,
    a_init: f64,
    cfg: &LbfgsConfig,
) -> Option<Accepted> {
    let armijo = |a: f64, f: f64| f <= f0 + cfg.c1 * a * dphi0;
    let curvature = |d: f64| d.abs() <= -cfg.c2 * dphi0;
    let (mut lo, mut f_lo, mut d_lo) = (0.0, f0, dphi0);
    let mut lo_probe: Option<Probe> = None;
    let mut a = a_init;
    let mut hi: Option<(f64, f64, f64)> = None;
    for i in 0..cfg.max_line_search {
        let p = line.at(a);
        if !armijo(a, p.f) || (i > 0 && p.f >= f_lo) {
            hi = Some((a, p.f, p.dphi));
            break;
        }
        if curvature(p.dphi) {
            return Some(Accepted { step: a, probe: p });
        }
        if p.dphi >= 0.0 {
            hi = Some((lo, f_lo, d_lo));
            (lo, f_lo, d_lo) = (a, p.f, p.dphi);
            lo_probe = Some(p);
            break;
        }
        (lo, f_lo, d_lo) = (a, p.f, p.dphi);
        lo_probe = Some(p);
        a *= 2.0;
    }
    let Some((mut hi_a, mut f_hi, mut d_hi)) = hi else {
        return lo_probe.map(|probe| Accepted { step: lo, probe });
    };
    while line.evals < cfg.max_line_search {
        let (left, right) = if lo < hi_a { (lo, hi_a) } else { (hi_a, lo) };
        let width = right - left;
        if width <= f64::EPSILON * right.abs().max(1e-300) {
            break;
        }
        let guard = 0.1 * width;
        let a = match cubic_min(lo, f_lo, d_lo, hi_a, f_hi, d_hi) {
            Some(t) if t > left + guard && t < right - guard => t,
            _ => 0.5 * (lo + hi_a),
        };
        let p = line.at(a);
        if !armijo(a, p.f) || p.f >= f_lo {
            (hi_a, f_hi, d_hi) = (a, p.f, p.dphi);
        } else {
            if curvature(p.dphi) {
                return Some(Accepted { step: a, probe: p });
            }
            if p.dphi * (hi_a - lo) >= 0.0 {
                (hi_a, f_hi, d_hi) = (lo, f_lo, d_lo);
            }
            (lo, f_lo, d_lo) = (a, p.f, p.dphi);
            lo_probe = Some(p);
        }
    }
    lo_probe.map(|probe| Accepted { step: lo, probe })
}

/// Minimizes `eval`, which writes the gradient into its second argument and
/// returns the objective.
pub fn lbfgs_minimize<F>(mut eval: F, x0: Vec<f64>, cfg: &LbfgsConfig) -> Result<LbfgsResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    cfg.validate()?;
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = eval(&x, &mut g);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "objective or gradient is not finite at the start (f = {f})"
        )));
    }
    let mut history = vec![f];
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut alpha = vec![0.0; cfg.memory];
    let mut iterations = 0;
    while inf_norm(&g) > cfg.grad_tolerance && iterations < cfg.max_iters {
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        for (k, (s, y, rho)) in mem.iter().enumerate().rev() {
            alpha[k] = rho * dot(s, &d);
            d.iter_mut()
                .zip(y)
                .for_each(|(di, yi)| *di -= alpha[k] * yi);
        }
        if let Some((s, y, _)) = mem.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|di| *di *= gamma);
        }
        for (k, (s, y, rho)) in mem.iter().enumerate() {
            let beta = rho * dot(y, &d);
            d.iter_mut()
                .zip(s)
                .for_each(|(di, si)| *di += (alpha[k] - beta) * si);
        }
        let mut dphi0 = dot(&g, &d);
        if dphi0.is_nan() || dphi0 >= 0.0 {
            mem.clear();
            d = g.iter().map(|v| -v).collect();
            dphi0 = -dot(&g, &g);
        }
        let a_init = if mem.is_empty() {
            (1.0 / inf_norm(&d)).min(1.0)
        } else {
            1.0
        };
        let accepted = {
            let mut line = Line {
                eval: &mut eval,
                x: &x,
                d: &d,
                buf: vec![0.0; n],
                evals: 0,
            };
            line_search(&mut line, f, dphi0, a_init, cfg)
        };
        let Some(Accepted { step, probe }) = accepted else {
            return Err(Error::LineSearch {
                iterations,
                value: f,
                iterate: x,
            });
        };
        let s: Vec<f64> = d.iter().map(|di| step * di).collect();
        let y: Vec<f64> = probe.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        x.iter_mut().zip(&s).for_each(|(xi, si)| *xi += si);
        if probe.g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "gradient is not finite after iteration {iterations}"
            )));
        }
        f = probe.f;
        g = probe.g;
        history.push(f);
        iterations += 1;
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if mem.len() == cfg.memory {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
    }
    let grad_inf_norm = inf_norm(&g);
    Ok(LbfgsResult {
        x,
        f,
        iterations,
        converged: grad_inf_norm <= cfg.grad_tolerance,
        grad_inf_norm,
        history,
    })
}
