// SPDX-License-Identifier: MIT OR Apache-2.0

//! Slow, independent reference implementations for testing.
//!
//! Nothing here shares code with the toolkit: eigenvectors come from cyclic
//! Jacobi rotations, Fisher p-values from exact integer arithmetic, simplex
//! projections from support enumeration with a KKT check, and the normal CDF
//! from composite Simpson quadrature.

/// Eigenpairs of a symmetric matrix, sorted by descending eigenvalue.
/// Eigenvectors are unit columns, returned as rows of the output.
#[allow(clippy::needless_range_loop)]
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j] * m[i][j]).sum();
        let scale: f64 = (0..n).map(|i| m[i][i] * m[i][i]).sum::<f64>().max(f64::MIN_POSITIVE);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q] == 0.0 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| m[j][j].total_cmp(&m[i][i]));
    let values = idx.iter().map(|&i| m[i][i]).collect();
    let vectors = idx.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (values, vectors)
}

/// Sample covariance (denominator N−1) of row-major data, optionally centered.
pub fn covariance(rows: &[Vec<f64>], center: bool) -> Vec<Vec<f64>> {
    let n = rows.len();
    let h = rows[0].len();
    let mean: Vec<f64> = (0..h)
        .map(|j| if center { rows.iter().map(|r| r[j]).sum::<f64>() / n as f64 } else { 0.0 })
        .collect();
    (0..h)
        .map(|a| {
            (0..h)
                .map(|b| rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (n - 1) as f64)
                .collect()
        })
        .collect()
}

fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * u128::from(n - i) / u128::from(i + 1);
    }
    acc
}

/// Two-sided Fisher exact p-value by full enumeration of the tables sharing
/// the observed margins, comparing point probabilities as exact integers.
pub fn fisher_exact_enumerated(a: u64, b: u64, c: u64, d: u64) -> f64 {
    let (r1, r2, c1) = (a + b, c + d, a + c);
    let n = r1 + r2;
    let weight = |x: u64| binomial(r1, x) * binomial(r2, c1 - x);
    let observed = weight(a);
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    let tail: u128 = (lo..=hi).map(weight).filter(|&w| w <= observed).sum();
    let total = binomial(n, c1);
    (tail as f64 / total as f64).min(1.0)
}

/// Euclidean projection onto the probability simplex by trying every
/// support and keeping the one that satisfies the KKT conditions.
pub fn simplex_projection_enumerated(z: &[f64]) -> Vec<f64> {
    let n = z.len();
    assert!((1..=16).contains(&n), "enumeration oracle handles 1..=16 entries");
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let tau = (support.iter().map(|&i| z[i]).sum::<f64>() - 1.0) / support.len() as f64;
        let alpha: Vec<f64> = (0..n).map(|i| if mask >> i & 1 == 1 { z[i] - tau } else { 0.0 }).collect();
        let residual = kkt_violation(z, &alpha, tau);
        if best.as_ref().is_none_or(|(r, _)| residual < *r) {
            best = Some((residual, alpha));
        }
    }
    best.expect("non-empty input").1
}

/// Largest violation of the simplex-projection KKT conditions for threshold
/// `tau`: `α ≥ 0`, `Σα = 1`, `α_i = z_i − τ` where `α_i > 0`, `z_j ≤ τ` where `α_j = 0`.
pub fn kkt_violation(z: &[f64], alpha: &[f64], tau: f64) -> f64 {
    let mut worst = (alpha.iter().sum::<f64>() - 1.0).abs();
    for (&zi, &ai) in z.iter().zip(alpha) {
        worst = worst.max((-ai).max(0.0));
        if ai > 0.0 {
            worst = worst.max((ai - (zi - tau)).abs());
        } else {
            worst = worst.max((zi - tau).max(0.0));
        }
    }
    worst
}

/// Standard normal CDF via composite Simpson integration of the density.
pub fn normal_cdf_quadrature(x: f64) -> f64 {
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let steps = 20_000;
    let h = x / steps as f64;
    let mut s = pdf(0.0) + pdf(x);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * pdf(i as f64 * h);
    }
    0.5 + s * h / 3.0
}

/// `x·Φ(x)` with the quadrature CDF.
pub fn gelu_quadrature(x: f64) -> f64 {
    x * normal_cdf_quadrature(x)
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_difference<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[i] += h;
    xm[i] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Mean binary cross-entropy with logits and a positive-class weight,
/// written directly from the definition.
pub fn weighted_bce(logits: &[f64], targets: &[f64], pos_weight: f64) -> f64 {
    let ln_sigmoid = |z: f64| if z >= 0.0 { -(-z).exp().ln_1p() } else { z - z.exp().ln_1p() };
    let total: f64 = logits
        .iter()
        .zip(targets)
        .map(|(&z, &y)| -(pos_weight * y * ln_sigmoid(z) + (1.0 - y) * ln_sigmoid(-z)))
        .sum();
    total / logits.len() as f64
}
