// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-layer aggregation weights of a trained probe, plus a Gaussian-smoothed
//! curve for plotting.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probes::Probe;

/// Default smoothing width, in layers.
pub const DEFAULT_SMOOTHING_SIGMA: f64 = 1.0;

/// Kernel radius in standard deviations.
const TRUNCATE: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeightReport {
    pub sigma: f64,
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
    /// 0-based index of the largest raw weight.
    pub raw_argmax: usize,
    /// 0-based index of the largest smoothed weight.
    pub smoothed_argmax: usize,
}

impl LayerWeightReport {
    /// `layer,raw,smoothed` with 1-based layer numbers.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,raw,smoothed\n");
        for (i, (r, s)) in self.raw.iter().zip(&self.smoothed).enumerate() {
            writeln!(out, "{},{:.17e},{:.17e}", i + 1, r, s).unwrap();
        }
        out
    }
}

/// Index into `0..len` under half-sample symmetric reflection
/// (`d c b a | a b c d | d c b a`), repeated as often as needed.
fn reflect(idx: isize, len: usize) -> usize {
    let period = 2 * len as isize;
    let m = idx.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Normalized Gaussian kernel truncated at `4σ`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (TRUNCATE * sigma).ceil().max(0.0) as usize;
    let raw: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|k| k / sum).collect()
}

/// Convolution with a truncated Gaussian under reflect padding. `σ = 0`
/// returns the input unchanged.
pub fn gaussian_smooth(values: &[f64], sigma: f64) -> Vec<f64> {
    if values.is_empty() || sigma <= 0.0 {
        return values.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    (0..values.len())
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * values[reflect(i as isize + k as isize - radius, values.len())])
                .sum()
        })
        .collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn layer_weight_report(probe: &Probe, sigma: f64) -> Result<LayerWeightReport> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("smoothing sigma must be finite and >= 0, got {sigma}")));
    }
    let raw = probe
        .layer_weights()
        .ok_or_else(|| Error::UnsupportedVariant("final-lr has no layer weights".into()))?;
    let smoothed = gaussian_smooth(&raw, sigma);
    Ok(LayerWeightReport {
        sigma,
        raw_argmax: argmax(&raw),
        smoothed_argmax: argmax(&smoothed),
        raw,
        smoothed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probes::{FinalLRParams, LayerLRParams};

    #[test]
    fn constant_input_is_fixed_point() {
        let v = vec![0.125; 8];
        for s in [0.5, 1.0, 3.0, 20.0] {
            for (a, b) in gaussian_smooth(&v, s).iter().zip(&v) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn tiny_sigma_is_identity() {
        let v = [0.1, 0.5, 0.2, 0.2];
        assert_eq!(gaussian_smooth(&v, 1e-6), v.to_vec());
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-5..9).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![3, 3, 2, 1, 0, 0, 1, 2, 3, 3, 2, 1, 0, 0]);
    }

    #[test]
    fn final_lr_unsupported() {
        let p = Probe::FinalLr(FinalLRParams::identity(3));
        assert!(matches!(layer_weight_report(&p, 1.0), Err(Error::UnsupportedVariant(_))));
    }

    #[test]
    fn report_and_csv() {
        let p = Probe::LayerLr(LayerLRParams { theta: vec![0.0, 3.0, 0.0], w: vec![1.0], b: 0.0 });
        let r = layer_weight_report(&p, 1.0).unwrap();
        assert_eq!(r.raw_argmax, 1);
        let csv = r.to_csv();
        assert!(csv.starts_with("layer,raw,smoothed\n1,"));
        assert_eq!(csv.lines().count(), 4);
    }
}
