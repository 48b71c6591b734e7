// SPDX-License-Identifier: MIT OR Apache-2.0

//! Two-component PCA.
//!
//! Small hidden sizes go through a dense eigendecomposition of the sample
//! covariance. Wider matrices (real dumps have H in the thousands) use block
//! subspace iteration on `XᵀX` with a Rayleigh-Ritz step, which never forms
//! the `H x H` covariance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden sizes up to this use the dense covariance route.
pub const DENSE_PCA_MAX_DIM: usize = 512;

const SUBSPACE_BLOCK: usize = 8;
const SUBSPACE_MAX_ITERS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PcaMethod {
    Auto,
    Covariance,
    Iterative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    /// Two orthonormal directions of length H.
    pub components: [Vec<f64>; 2],
    /// `N x 2` scores, one `[x, y]` pair per row.
    pub projections: Vec<[f64; 2]>,
    /// Share of total variance along each component, descending.
    pub explained_variance_ratio: [f64; 2],
    /// Sample variances (eigenvalues of the covariance) along each component.
    pub explained_variance: [f64; 2],
    /// Per-column mean that was subtracted (zeros when not centering).
    pub mean: Vec<f64>,
}

fn centered(x: &DMatrix<f64>, center: bool) -> (DMatrix<f64>, Vec<f64>) {
    let mean: Vec<f64> = if center {
        (0..x.ncols()).map(|j| x.column(j).mean()).collect()
    } else {
        vec![0.0; x.ncols()]
    };
    let mut xc = x.clone();
    for (j, m) in mean.iter().enumerate() {
        xc.column_mut(j).add_scalar_mut(-m);
    }
    (xc, mean)
}

/// Flips `v` so that its largest-magnitude coordinate is positive.
fn fix_sign(v: &mut [f64]) {
    let mut idx = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[idx].abs() {
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Eigenpairs sorted by descending eigenvalue.
fn sorted_eigen(sym: DMatrix<f64>) -> Vec<(f64, Vec<f64>)> {
    let eig = SymmetricEigen::new(sym);
    let mut pairs: Vec<(f64, Vec<f64>)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &l)| (l, eig.eigenvectors.column(i).iter().copied().collect()))
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    pairs
}

fn top2_covariance(xc: &DMatrix<f64>, denom: f64) -> [(f64, Vec<f64>); 2] {
    let cov = (xc.transpose() * xc) / denom;
    let mut pairs = sorted_eigen(cov).into_iter();
    let first = pairs.next().unwrap();
    let second = pairs.next().unwrap_or((0.0, orthogonal_unit(&first.1)));
    [first, second]
}

/// With H = 1 there is no second direction; the slot is filled with zeros.
fn orthogonal_unit(v: &[f64]) -> Vec<f64> {
    vec![0.0; v.len()]
}

fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    let k = m.ncols();
    let q = m.qr().q();
    q.columns(0, k).into_owned()
}

fn top2_subspace(xc: &DMatrix<f64>, denom: f64) -> Result<[(f64, Vec<f64>); 2]> {
    let (n, h) = xc.shape();
    let k = SUBSPACE_BLOCK.min(h).min(n.max(2)).max(2).min(h);
    let mut rng = ChaCha8Rng::seed_from_u64(0x0005_EED0_F7CA);
    let start = DMatrix::from_fn(h, k, |_, _| rng.random_range(-1.0..1.0));
    let mut q = orthonormalize(start);
    for _ in 0..SUBSPACE_MAX_ITERS {
        let z = xc.transpose() * (xc * &q);
        q = orthonormalize(z);
        let xq = xc * &q;
        let t = (xq.transpose() * &xq) / denom;
        let ritz = sorted_eigen(t);
        let lift = |coef: &[f64]| -> DVector<f64> { &q * DVector::from_column_slice(coef) };
        let v1 = lift(&ritz[0].1);
        let v2 = ritz.get(1).map(|r| lift(&r.1));
        let vals = [ritz[0].0, ritz.get(1).map_or(0.0, |r| r.0)];
        let residual = |v: &DVector<f64>, l: f64| ((xc.transpose() * (xc * v)) / denom - v * l).norm();
        let tol = 1e-11 * vals[0].abs().max(f64::MIN_POSITIVE);
        let settled = residual(&v1, vals[0]) <= tol && v2.as_ref().is_none_or(|v| residual(v, vals[1]) <= tol);
        if settled {
            let v1: Vec<f64> = v1.iter().copied().collect();
            let v2 = v2.map_or_else(|| orthogonal_unit(&v1), |v| v.iter().copied().collect());
            return Ok([(vals[0], v1), (vals[1], v2)]);
        }
    }
    Err(Error::Numeric("subspace iteration did not converge".into()))
}

/// PCA with the method picked by hidden size.
pub fn pca_2d(x: &DMatrix<f64>, center: bool) -> Result<PcaResult> {
    pca_2d_with(x, center, PcaMethod::Auto)
}

pub fn pca_2d_with(x: &DMatrix<f64>, center: bool, method: PcaMethod) -> Result<PcaResult> {
    let (n, h) = x.shape();
    if n < 3 {
        return Err(Error::InsufficientData(format!("PCA needs at least 3 rows, got {n}")));
    }
    if h == 0 {
        return Err(Error::InsufficientData("PCA needs at least one column".into()));
    }
    let (xc, mean) = centered(x, center);
    let denom = (n - 1) as f64;
    let method = match method {
        PcaMethod::Auto if h <= DENSE_PCA_MAX_DIM => PcaMethod::Covariance,
        PcaMethod::Auto => PcaMethod::Iterative,
        m => m,
    };
    let top = match method {
        PcaMethod::Iterative => top2_subspace(&xc, denom)?,
        _ => top2_covariance(&xc, denom),
    };
    let total = xc.norm_squared() / denom;
    let [(l1, mut v1), (l2, mut v2)] = top;
    fix_sign(&mut v1);
    fix_sign(&mut v2);
    let (l1, l2) = (l1.max(0.0), l2.max(0.0));
    let ratio = |l: f64| if total > 0.0 { (l / total).clamp(0.0, 1.0) } else { 0.0 };
    let projections = (0..n)
        .map(|i| {
            let row = xc.row(i);
            let p = |v: &[f64]| row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
            [p(&v1), p(&v2)]
        })
        .collect();
    Ok(PcaResult {
        components: [v1, v2],
        projections,
        explained_variance_ratio: [ratio(l1), ratio(l2)],
        explained_variance: [l1, l2],
        mean,
    })
}
