// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::solver::{balanced_sample_weights, solve_logistic, DenseDesign, SolverOptions, SolverReport};
use crate::error::{Error, Result};
use crate::probes::FinalLRParams;
use crate::store::{class_stats, Dataset};

/// Per-feature mean and population standard deviation; zero deviations become 1.
pub fn fit_scaler(rows: &[&[f32]], hidden: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len().max(1) as f64;
    let mut mean = vec![0.0; hidden];
    for r in rows {
        mean.iter_mut().zip(r.iter()).for_each(|(m, &x)| *m += f64::from(x));
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; hidden];
    for r in rows {
        var.iter_mut()
            .zip(r.iter().zip(&mean))
            .for_each(|(v, (&x, m))| *v += (f64::from(x) - m).powi(2));
    }
    let std = var
        .into_iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s > 0.0 { s } else { 1.0 }
        })
        .collect();
    (mean, std)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalLrFit {
    pub params: FinalLRParams,
    pub report: SolverReport,
    /// Weight applied to each parametric / contextual example.
    pub class_weights: [f64; 2],
}

/// Balanced, ℓ2-regularized logistic regression on the standardized final layer.
pub fn fit_final_lr(train: &Dataset, opts: SolverOptions) -> Result<FinalLrFit> {
    let stats = class_stats(train)?;
    if opts.c.is_nan() || opts.c <= 0.0 {
        return Err(Error::InvalidConfig(format!("C must be positive, got {}", opts.c)));
    }
    let h = train.hidden();
    let rows: Vec<&[f32]> = train.records().iter().map(|r| r.tensor.last_row()).collect();
    let (scaler_mean, scaler_std) = fit_scaler(&rows, h);
    let mut params = FinalLRParams { w: vec![0.0; h], b: 0.0, scaler_mean, scaler_std };
    let x: Vec<f64> = rows.iter().flat_map(|r| params.standardize(r)).collect();
    let y: Vec<f64> = train.records().iter().map(|r| r.label.target()).collect();
    let weights = balanced_sample_weights(&y);
    let (fit, report) = solve_logistic(&DenseDesign::new(&x, h), &y, &weights, opts);
    params.w = fit.w;
    params.b = fit.b;
    let n = train.len() as f64;
    Ok(FinalLrFit {
        params,
        report,
        class_weights: [n / (2.0 * stats.positives as f64), n / (2.0 * stats.negatives as f64)],
    })
}
