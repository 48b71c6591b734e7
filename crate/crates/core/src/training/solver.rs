// SPDX-License-Identifier: MIT OR Apache-2.0

//! Deterministic full-batch solver for class-weighted, ℓ2-regularized
//! logistic regression:
//!
//! ```text
//! F(w, b) = Σ_i c_i · ℓ(y_i, w·x_i + b) + ‖w‖² / (2C)
//! ```
//!
//! The intercept is not penalized. Steps are plain gradient steps whose
//! length is found by Armijo backtracking, starting from a Barzilai-Borwein
//! trial step. Every accepted step strictly lowers `F`. The decrease is
//! evaluated as a difference of per-example losses rather than of two
//! totals, so the test stays meaningful once `F` changes by less than its
//! own rounding error.

use serde::{Deserialize, Serialize};

use crate::probes::ops::{sigmoid, softplus};

/// Row access to a design matrix.
pub trait Design: Sync {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;
    fn row_dot(&self, row: usize, w: &[f64]) -> f64;
    /// `out += scale · x_row`.
    fn add_row(&self, row: usize, scale: f64, out: &mut [f64]);
}

/// Row-major dense matrix view.
#[derive(Debug, Clone, Copy)]
pub struct DenseDesign<'a> {
    data: &'a [f64],
    cols: usize,
}

impl<'a> DenseDesign<'a> {
    pub fn new(data: &'a [f64], cols: usize) -> Self {
        assert!(cols > 0 && data.len().is_multiple_of(cols), "dense design shape");
        Self { data, cols }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

impl Design for DenseDesign<'_> {
    fn n_rows(&self) -> usize {
        self.data.len() / self.cols
    }

    fn n_cols(&self) -> usize {
        self.cols
    }

    fn row_dot(&self, row: usize, w: &[f64]) -> f64 {
        self.row(row).iter().zip(w).map(|(x, v)| x * v).sum()
    }

    fn add_row(&self, row: usize, scale: f64, out: &mut [f64]) {
        out.iter_mut().zip(self.row(row)).for_each(|(o, x)| *o += scale * x);
    }
}

/// Compressed sparse rows: `(column, value)` pairs sorted by column.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseRows {
    pub rows: Vec<Vec<(u32, f64)>>,
    pub cols: usize,
}

impl SparseRows {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.rows[row]
            .binary_search_by_key(&(col as u32), |e| e.0)
            .map_or(0.0, |i| self.rows[row][i].1)
    }

    pub fn row_dense(&self, row: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for &(c, v) in &self.rows[row] {
            out[c as usize] = v;
        }
        out
    }
}

impl Design for SparseRows {
    fn n_rows(&self) -> usize {
        self.rows.len()
    }

    fn n_cols(&self) -> usize {
        self.cols
    }

    fn row_dot(&self, row: usize, w: &[f64]) -> f64 {
        self.rows[row].iter().map(|&(c, v)| v * w[c as usize]).sum()
    }

    fn add_row(&self, row: usize, scale: f64, out: &mut [f64]) {
        for &(c, v) in &self.rows[row] {
            out[c as usize] += scale * v;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Inverse regularization strength.
    pub c: f64,
    pub max_iter: usize,
    /// Stop once the gradient ∞-norm falls below this.
    pub tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { c: 1.0, max_iter: 1000, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LogisticFit {
    pub fn decision<D: Design>(&self, x: &D, row: usize) -> f64 {
        x.row_dot(row, &self.w) + self.b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: usize,
    pub converged: bool,
    pub grad_inf_norm: f64,
    /// Objective value before the first step and after each accepted step.
    pub objective_history: Vec<f64>,
}

/// `N / (2·N_c)` per example, from binary targets in `{0, 1}`.
pub fn balanced_sample_weights(labels: &[f64]) -> Vec<f64> {
    let n = labels.len() as f64;
    let pos = labels.iter().filter(|y| **y > 0.5).count() as f64;
    let neg = n - pos;
    let (wp, wn) = (n / (2.0 * pos), n / (2.0 * neg));
    labels.iter().map(|y| if *y > 0.5 { wp } else { wn }).collect()
}

/// The objective being minimized, with analytic gradient.
pub struct LogisticObjective<'a, D: Design> {
    pub x: &'a D,
    pub y: &'a [f64],
    pub sample_weights: &'a [f64],
    pub c: f64,
}

impl<D: Design> LogisticObjective<'_, D> {
    pub fn value(&self, w: &[f64], b: f64) -> f64 {
        let data: f64 = (0..self.x.n_rows())
            .map(|i| {
                let z = self.x.row_dot(i, w) + b;
                let l = if self.y[i] > 0.5 { softplus(-z) } else { softplus(z) };
                self.sample_weights[i] * l
            })
            .sum();
        data + w.iter().map(|v| v * v).sum::<f64>() / (2.0 * self.c)
    }

    /// `F(w + dw, b + db) − F(w, b)` without cancellation between the totals.
    pub fn change(&self, w: &[f64], b: f64, dw: &[f64], db: f64) -> f64 {
        let data: f64 = (0..self.x.n_rows())
            .map(|i| {
                let z = self.x.row_dot(i, w) + b;
                let dz = self.x.row_dot(i, dw) + db;
                let d = if self.y[i] > 0.5 { softplus_change(-z, -dz) } else { softplus_change(z, dz) };
                self.sample_weights[i] * d
            })
            .sum();
        let reg: f64 = w.iter().zip(dw).map(|(wi, di)| di * (2.0 * wi + di)).sum();
        data + reg / (2.0 * self.c)
    }

    /// Returns `(F, ∂F/∂w, ∂F/∂b)`.
    pub fn value_and_grad(&self, w: &[f64], b: f64) -> (f64, Vec<f64>, f64) {
        let mut gw: Vec<f64> = w.iter().map(|v| v / self.c).collect();
        let mut gb = 0.0;
        let mut f = w.iter().map(|v| v * v).sum::<f64>() / (2.0 * self.c);
        for i in 0..self.x.n_rows() {
            let z = self.x.row_dot(i, w) + b;
            let y = self.y[i];
            let cw = self.sample_weights[i];
            f += cw * if y > 0.5 { softplus(-z) } else { softplus(z) };
            let r = cw * (sigmoid(z) - y);
            self.x.add_row(i, r, &mut gw);
            gb += r;
        }
        (f, gw, gb)
    }
}

/// `softplus(z + dz) − softplus(z)` as `ln(1 + σ(z)·(e^dz − 1))`.
fn softplus_change(z: f64, dz: f64) -> f64 {
    (sigmoid(z) * dz.exp_m1()).ln_1p()
}

fn inf_norm(gw: &[f64], gb: f64) -> f64 {
    gw.iter().fold(gb.abs(), |m, g| m.max(g.abs()))
}

/// Minimizes the weighted, regularized logistic loss from `w = 0, b = 0`.
pub fn solve_logistic<D: Design>(
    x: &D,
    y: &[f64],
    sample_weights: &[f64],
    opts: SolverOptions,
) -> (LogisticFit, SolverReport) {
    let obj = LogisticObjective { x, y, sample_weights, c: opts.c };
    let mut w = vec![0.0; x.n_cols()];
    let mut b = 0.0;
    let (mut f, mut gw, mut gb) = obj.value_and_grad(&w, b);
    let mut history = vec![f];
    let mut step = 1.0 / (1.0 + sample_weights.iter().sum::<f64>());
    let mut iterations = 0;
    let mut gnorm = inf_norm(&gw, gb);

    while iterations < opts.max_iter && gnorm >= opts.tol {
        let g2: f64 = gw.iter().map(|g| g * g).sum::<f64>() + gb * gb;
        let mut t = step;
        let mut halvings = 0;
        let (w_new, b_new, delta) = loop {
            let dw: Vec<f64> = gw.iter().map(|g| -t * g).collect();
            let db = -t * gb;
            let delta = obj.change(&w, b, &dw, db);
            if delta <= -0.5 * t * g2 || halvings >= 60 {
                let w_new = w.iter().zip(&dw).map(|(wi, di)| wi + di).collect::<Vec<_>>();
                break (w_new, b + db, delta);
            }
            t *= 0.5;
            halvings += 1;
        };
        if delta.is_nan() || delta >= 0.0 {
            // No representable decrease left.
            break;
        }
        let (_, gw_new, gb_new) = obj.value_and_grad(&w_new, b_new);
        // Barzilai-Borwein trial length for the next iteration.
        let mut sy = 0.0;
        let mut ss = 0.0;
        for i in 0..w.len() {
            let s = w_new[i] - w[i];
            sy += s * (gw_new[i] - gw[i]);
            ss += s * s;
        }
        let sb = b_new - b;
        sy += sb * (gb_new - gb);
        ss += sb * sb;
        step = if sy > 0.0 { ss / sy } else { t * 2.0 };

        w = w_new;
        b = b_new;
        f += delta;
        gw = gw_new;
        gb = gb_new;
        gnorm = inf_norm(&gw, gb);
        history.push(f);
        iterations += 1;
    }

    let report = SolverReport {
        iterations,
        converged: gnorm < opts.tol,
        grad_inf_norm: gnorm,
        objective_history: history,
    };
    (LogisticFit { w, b }, report)
}
