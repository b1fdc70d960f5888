//! L2-regularized logistic regression on standardized inputs.
//!
//! Objective, with `z_i = b + w·x_i` over standardized rows:
//!
//! ```text
//! L(w, b) = (1/n) Σ [ln(1 + e^{z_i}) − y_i z_i] + (λ/2) ‖w‖²
//! ```
//!
//! The intercept is not penalized. Minimization is accelerated gradient
//! descent with a backtracking step size, restarted whenever the loss goes
//! up, and stops once the largest gradient component falls below the
//! tolerance.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub means: Vec<f64>,
    /// Per-feature standard deviation; zero marks a feature that is ignored.
    pub scales: Vec<f64>,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Loss, weight gradient and intercept gradient. `x` is row-major `n × p`.
pub fn loss_and_grad(x: &[f64], y: &[f64], w: &[f64], b: f64, l2: f64) -> (f64, Vec<f64>, f64) {
    let p = w.len();
    let n = y.len();
    let mut loss = 0.0;
    let mut grad = vec![0.0; p];
    let mut grad_b = 0.0;
    for (i, yi) in y.iter().enumerate() {
        let row = &x[i * p..(i + 1) * p];
        let z = b + row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
        loss += softplus(z) - yi * z;
        let r = sigmoid(z) - yi;
        grad_b += r;
        for (g, a) in grad.iter_mut().zip(row) {
            *g += r * a;
        }
    }
    let inv = 1.0 / n as f64;
    loss *= inv;
    grad_b *= inv;
    for (g, wj) in grad.iter_mut().zip(w) {
        *g = *g * inv + l2 * wj;
    }
    loss += 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    (loss, grad, grad_b)
}

fn loss_only(x: &[f64], y: &[f64], w: &[f64], b: f64, l2: f64) -> f64 {
    let p = w.len();
    let mut loss = 0.0;
    for (i, yi) in y.iter().enumerate() {
        let row = &x[i * p..(i + 1) * p];
        let z = b + row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
        loss += softplus(z) - yi * z;
    }
    loss / y.len() as f64 + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>()
}

/// Mean and population standard deviation per column of row-major `x`.
pub fn standardization(x: &[f64], n: usize, p: usize) -> (Vec<f64>, Vec<f64>) {
    let mut means = vec![0.0; p];
    for row in x.chunks_exact(p) {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in means.iter_mut() {
        *m /= n as f64;
    }
    let mut var = vec![0.0; p];
    for row in x.chunks_exact(p) {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&means) {
            *s += (v - m) * (v - m);
        }
    }
    let scales = var
        .into_iter()
        .map(|s| {
            let sd = (s / n as f64).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                0.0
            }
        })
        .collect();
    (means, scales)
}

fn standardize_into(row: &[f64], means: &[f64], scales: &[f64], out: &mut [f64]) {
    for j in 0..row.len() {
        out[j] = if scales[j] > 0.0 { (row[j] - means[j]) / scales[j] } else { 0.0 };
    }
}

impl LogisticModel {
    /// Fits on row-major `x` (`n × p`) with 0/1 labels.
    pub fn fit(x: &[f64], labels: &[bool], p: usize, l2: f64, tolerance: f64, max_iter: usize) -> LogisticModel {
        let n = labels.len();
        let (means, scales) = standardization(x, n, p);
        let mut z = vec![0.0; n * p];
        for i in 0..n {
            standardize_into(&x[i * p..(i + 1) * p], &means, &scales, &mut z[i * p..(i + 1) * p]);
        }
        let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();

        let mut w = vec![0.0; p];
        let mut b = 0.0;
        let (mut prev_w, mut prev_b) = (w.clone(), b);
        let mut t = 1.0f64;
        let mut lipschitz = 1.0f64;
        let mut current = loss_only(&z, &y, &w, b, l2);
        let mut iterations = 0;
        let mut converged = false;
        while iterations < max_iter {
            iterations += 1;
            // extrapolated point
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let mom = (t - 1.0) / t_next;
            let yw: Vec<f64> = w.iter().zip(&prev_w).map(|(a, c)| a + mom * (a - c)).collect();
            let yb = b + mom * (b - prev_b);
            let (fy, gw, gb) = loss_and_grad(&z, &y, &yw, yb, l2);
            if gw.iter().chain(std::iter::once(&gb)).all(|g| g.abs() < tolerance) {
                w = yw;
                b = yb;
                converged = true;
                break;
            }
            let gnorm2 = gw.iter().map(|g| g * g).sum::<f64>() + gb * gb;
            lipschitz = (lipschitz * 0.5).max(1e-8);
            let (cand_w, cand_b, cand_loss) = loop {
                let step = 1.0 / lipschitz;
                let cw: Vec<f64> = yw.iter().zip(&gw).map(|(a, g)| a - step * g).collect();
                let cb = yb - step * gb;
                let cl = loss_only(&z, &y, &cw, cb, l2);
                if cl <= fy - 0.5 * step * gnorm2 + 1e-15 * fy.abs() || lipschitz > 1e12 {
                    break (cw, cb, cl);
                }
                lipschitz *= 2.0;
            };
            if cand_loss > current {
                // restart momentum from the last accepted iterate
                prev_w.clone_from(&w);
                prev_b = b;
                t = 1.0;
                continue;
            }
            prev_w = std::mem::replace(&mut w, cand_w);
            prev_b = std::mem::replace(&mut b, cand_b);
            current = cand_loss;
            t = t_next;
        }
        LogisticModel { means, scales, weights: w, intercept: b, iterations, converged }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut z = self.intercept;
        for (((x, w), m), s) in row.iter().zip(&self.weights).zip(&self.means).zip(&self.scales) {
            if *s > 0.0 {
                z += w * (x - m) / s;
            }
        }
        sigmoid(z)
    }

    /// |w_j| on the standardized scale, normalized to sum to one.
    pub fn importances(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().map(|w| w.abs()).sum();
        if total > 0.0 {
            self.weights.iter().map(|w| w.abs() / total).collect()
        } else {
            vec![1.0 / self.weights.len().max(1) as f64; self.weights.len()]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_points_fit_perfectly() {
        let x = [0.0, 0.0, 1.0, 0.2, 3.0, 3.0, 4.0, 2.5];
        let y = [false, false, true, true];
        let m = LogisticModel::fit(&x, &y, 2, 0.01, 1e-8, 5000);
        for (i, l) in y.iter().enumerate() {
            assert_eq!(m.predict(&x[i * 2..i * 2 + 2]) > 0.5, *l);
        }
    }

    #[test]
    fn zero_weights_give_half() {
        let m = LogisticModel {
            means: vec![0.0; 3],
            scales: vec![1.0; 3],
            weights: vec![0.0; 3],
            intercept: 0.0,
            iterations: 0,
            converged: true,
        };
        assert_eq!(m.predict(&[1.0, -4.0, 9.0]), 0.5);
    }

    #[test]
    fn constant_feature_is_zeroed() {
        let x = [1.0, 7.0, 2.0, 7.0, 3.0, 7.0, 4.0, 7.0];
        let y = [false, false, true, true];
        let m = LogisticModel::fit(&x, &y, 2, 0.1, 1e-8, 5000);
        assert_eq!(m.scales[1], 0.0);
        assert_eq!(m.weights[1], 0.0);
        assert!(m.converged);
    }

    #[test]
    fn stationary_point_has_small_gradient() {
        let x: Vec<f64> = (0..40).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let y: Vec<bool> = (0..20).map(|i| (i * 7) % 3 == 0).collect();
        let m = LogisticModel::fit(&x, &y, 2, 0.1, 1e-9, 20_000);
        assert!(m.converged);
        let mut z = vec![0.0; 40];
        for i in 0..20 {
            standardize_into(&x[i * 2..i * 2 + 2], &m.means, &m.scales, &mut z[i * 2..i * 2 + 2]);
        }
        let yf: Vec<f64> = y.iter().map(|&b| b as u8 as f64).collect();
        let (_, g, gb) = loss_and_grad(&z, &yf, &m.weights, m.intercept, 0.1);
        assert!(g.iter().all(|v| v.abs() < 1e-8) && gb.abs() < 1e-8);
    }
}
