// SPDX-License-Identifier: MIT OR Apache-2.0

//! Elementwise and simplex-mapping primitives shared by the probes.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::store::LayerStack;

/// Divides every row of a row-major `rows x hidden` buffer by its Euclidean
/// norm. All-zero rows are left untouched.
pub fn l2_normalize_rows(data: &mut [f64], hidden: usize) {
    for row in data.chunks_exact_mut(hidden) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
}

/// Per-layer ℓ2 normalization of a stored activation stack, widened to f64.
pub fn l2_normalize_layers(tensor: &LayerStack) -> Vec<f64> {
    let mut out: Vec<f64> = tensor.as_slice().iter().map(|&v| f64::from(v)).collect();
    l2_normalize_rows(&mut out, tensor.hidden());
    out
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Max-shifted softmax.
pub fn softmax(theta: &[f64]) -> Vec<f64> {
    let max = theta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = theta.iter().map(|t| (t - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Vector-Jacobian product of softmax: `α ⊙ (g − ⟨α, g⟩)`.
pub fn softmax_backward(alpha: &[f64], grad_alpha: &[f64]) -> Vec<f64> {
    let dot: f64 = alpha.iter().zip(grad_alpha).map(|(a, g)| a * g).sum();
    alpha.iter().zip(grad_alpha).map(|(a, g)| a * (g - dot)).collect()
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn sparsemax(theta: &[f64]) -> Vec<f64> {
    let tau = sparsemax_threshold(theta);
    theta.iter().map(|z| (z - tau).max(0.0)).collect()
}

/// The threshold `τ` such that `Σ max(z − τ, 0) = 1`.
pub fn sparsemax_threshold(theta: &[f64]) -> f64 {
    let mut sorted = theta.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut support_sum = sorted[0];
    let mut k_support = 1usize;
    for (i, &z) in sorted.iter().enumerate() {
        cumsum += z;
        let k = (i + 1) as f64;
        if 1.0 + k * z > cumsum {
            k_support = i + 1;
            support_sum = cumsum;
        }
    }
    (support_sum - 1.0) / k_support as f64
}

/// Vector-Jacobian product of sparsemax. On the support `S` the Jacobian is
/// `I − 1 1ᵀ / |S|`; off the support it is zero.
pub fn sparsemax_backward(alpha: &[f64], grad_alpha: &[f64]) -> Vec<f64> {
    let (sum, count) = alpha
        .iter()
        .zip(grad_alpha)
        .filter(|(a, _)| **a > 0.0)
        .fold((0.0, 0usize), |(s, c), (_, g)| (s + g, c + 1));
    let mean = sum / count.max(1) as f64;
    alpha
        .iter()
        .zip(grad_alpha)
        .map(|(a, g)| if *a > 0.0 { g - mean } else { 0.0 })
        .collect()
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Exact GELU, `x · Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub fn gelu_grad(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `h̄ = Σ_ℓ α_ℓ x_ℓ` for a row-major `L x H` buffer.
pub(crate) fn blend(alpha: &[f64], x: &[f64], hidden: usize) -> Vec<f64> {
    let mut out = vec![0.0; hidden];
    for (a, row) in alpha.iter().zip(x.chunks_exact(hidden)) {
        if *a != 0.0 {
            out.iter_mut().zip(row).for_each(|(o, v)| *o += a * v);
        }
    }
    out
}
