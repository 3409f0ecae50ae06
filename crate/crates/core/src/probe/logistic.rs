//! Regularized logistic objectives over features with an appended bias
//! column. Losses are means over examples; the L2 penalty `l2/2 * |w|^2`
//! skips bias weights.

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};

/// `[x | 1]`.
pub fn with_bias(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let ones = Array2::ones((x.nrows(), 1));
    concatenate(Axis(1), &[x, ones.view()]).expect("same row count")
}

/// Softmax cross-entropy for `C` classes; parameters are a row-major
/// `C x (d + 1)` matrix with the bias last in each row.
pub struct Multinomial<'a> {
    pub x: &'a Array2<f64>,
    pub labels: &'a [usize],
    pub n_classes: usize,
    pub l2: f64,
}

impl Multinomial<'_> {
    pub fn n_params(&self) -> usize {
        self.n_classes * self.x.ncols()
    }

    pub fn eval(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        let (n, p) = self.x.dim();
        let c = self.n_classes;
        let wm = ArrayView2::from_shape((c, p), w).expect("parameter length");
        let mut z = self.x.dot(&wm.t());
        let mut loss = 0.0;
        for (mut row, &y) in z.rows_mut().into_iter().zip(self.labels) {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let lse = m + sum.ln();
            loss += lse - row[y];
            row.mapv_inplace(|v| (v - lse).exp());
            row[y] -= 1.0;
        }
        let inv_n = 1.0 / n as f64;
        let g = z.t().dot(self.x);
        let mut penalty = 0.0;
        for k in 0..c {
            for j in 0..p {
                let idx = k * p + j;
                let mut gij = g[[k, j]] * inv_n;
                if j + 1 < p {
                    gij += self.l2 * w[idx];
                    penalty += w[idx] * w[idx];
                }
                grad[idx] = gij;
            }
        }
        loss * inv_n + 0.5 * self.l2 * penalty
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on `{0, 1}` targets; parameters are `d + 1` weights
/// with the bias last.
pub struct Binary<'a> {
    pub x: &'a Array2<f64>,
    pub targets: ArrayView1<'a, bool>,
    pub l2: f64,
}

impl Binary<'_> {
    pub fn n_params(&self) -> usize {
        self.x.ncols()
    }

    pub fn eval(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        let (n, p) = self.x.dim();
        let wv = ArrayView1::from(w);
        let z = self.x.dot(&wv);
        let mut loss = 0.0;
        let resid: Array1<f64> = z
            .iter()
            .zip(self.targets.iter())
            .map(|(&zi, &t)| {
                let t = if t { 1.0 } else { 0.0 };
                loss += softplus(zi) - t * zi;
                sigmoid(zi) - t
            })
            .collect();
        let g = self.x.t().dot(&resid);
        let inv_n = 1.0 / n as f64;
        let mut penalty = 0.0;
        for j in 0..p {
            grad[j] = g[j] * inv_n;
            if j + 1 < p {
                grad[j] += self.l2 * w[j];
                penalty += w[j] * w[j];
            }
        }
        loss * inv_n + 0.5 * self.l2 * penalty
    }
}
