// SPDX-License-Identifier: MIT OR Apache-2.0

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{
    blend, dot, gelu, gelu_grad, l2_normalize_layers, sigmoid, softmax, softmax_backward,
    sparsemax, sparsemax_backward,
};
use crate::error::{Error, Result};
use crate::store::LayerStack;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "final-lr")]
    FinalLr,
    #[serde(rename = "layer-lr")]
    LayerLr,
    #[serde(rename = "layer-mlp")]
    LayerMlp,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::FinalLr => "final-lr",
            Variant::LayerLr => "layer-lr",
            Variant::LayerMlp => "layer-mlp",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Variant::FinalLr => 0,
            Variant::LayerLr => 1,
            Variant::LayerMlp => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Variant::FinalLr),
            1 => Some(Variant::LayerLr),
            2 => Some(Variant::LayerMlp),
            _ => None,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final-lr" => Ok(Variant::FinalLr),
            "layer-lr" => Ok(Variant::LayerLr),
            "layer-mlp" => Ok(Variant::LayerMlp),
            other => Err(Error::InvalidConfig(format!("unknown probe variant {other:?}"))),
        }
    }
}

/// A set of trainable arrays, visited in a fixed order by the optimizer.
pub trait ParamSet: Clone {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }
}

fn uniform_init<R: Rng>(rng: &mut R, len: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

// ---------------------------------------------------------------------------
// Final-layer logistic regression

/// Logistic unit on the standardized final-layer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalLRParams {
    pub w: Vec<f64>,
    pub b: f64,
    pub scaler_mean: Vec<f64>,
    /// Strictly positive; zero-variance features carry 1.
    pub scaler_std: Vec<f64>,
}

impl FinalLRParams {
    /// Zero weights with an identity scaler.
    pub fn identity(hidden: usize) -> Self {
        Self {
            w: vec![0.0; hidden],
            b: 0.0,
            scaler_mean: vec![0.0; hidden],
            scaler_std: vec![1.0; hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.w.len()
    }

    pub fn standardize(&self, last: &[f32]) -> Vec<f64> {
        last.iter()
            .zip(self.scaler_mean.iter().zip(&self.scaler_std))
            .map(|(&x, (m, s))| (f64::from(x) - m) / s)
            .collect()
    }

    /// Logit on an already standardized input.
    pub fn logit_standardized(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }

    pub fn logits(&self, inputs: &[&[f64]]) -> Vec<f64> {
        inputs.iter().map(|x| self.logit_standardized(x)).collect()
    }

    /// Gradient of `Σ_i dlogit_i · z_i` w.r.t. `(w, b)` for standardized inputs.
    pub fn backward(&self, inputs: &[&[f64]], dlogits: &[f64]) -> Self {
        let mut g = self.zeros_like();
        for (x, d) in inputs.iter().zip(dlogits) {
            g.w.iter_mut().zip(x.iter()).for_each(|(gw, xv)| *gw += d * xv);
            g.b += d;
        }
        g
    }
}

impl ParamSet for FinalLRParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.w, std::slice::from_ref(&self.b)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w, std::slice::from_mut(&mut self.b)]
    }
}

/// `σ(w·ĥ_L + b)` where `ĥ_L` is the standardized final layer.
pub fn forward_final_lr(tensor: &LayerStack, params: &FinalLRParams) -> Result<f64> {
    if tensor.hidden() != params.hidden() {
        return Err(Error::dims(params.hidden(), tensor.hidden()));
    }
    let x = params.standardize(tensor.last_row());
    Ok(sigmoid(params.logit_standardized(&x)))
}

// ---------------------------------------------------------------------------
// Layer-aggregated probes

/// Probes that aggregate ℓ2-normalized layers before a head. Inputs are
/// row-major `L x H` buffers that have already been normalized per layer.
pub trait LayerProbe: ParamSet + Send + Sync {
    fn layers(&self) -> usize;
    fn hidden(&self) -> usize;
    /// Length of the dropout mask the head expects.
    fn mask_len(&self) -> usize;
    /// Aggregation weights `α` over layers.
    fn layer_weights(&self) -> Vec<f64>;
    fn logits(&self, inputs: &[&[f64]], masks: Option<&[Vec<f64>]>) -> Vec<f64>;
    /// Gradient of `Σ_i dlogit_i · z_i` w.r.t. every parameter.
    fn backward(&self, inputs: &[&[f64]], masks: Option<&[Vec<f64>]>, dlogits: &[f64]) -> Self;
}

fn check_stack(tensor: &LayerStack, layers: usize, hidden: usize) -> Result<()> {
    if tensor.layers() != layers || tensor.hidden() != hidden {
        return Err(Error::dims(
            format!("{layers}x{hidden}"),
            format!("{}x{}", tensor.layers(), tensor.hidden()),
        ));
    }
    Ok(())
}

fn apply_mask(v: &mut [f64], mask: Option<&Vec<f64>>) {
    if let Some(m) = mask {
        v.iter_mut().zip(m).for_each(|(x, s)| *x *= s);
    }
}

/// Softmax-weighted layer blend followed by a linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerLRParams {
    pub theta: Vec<f64>,
    pub w: Vec<f64>,
    pub b: f64,
}

impl LayerLRParams {
    pub fn init<R: Rng>(layers: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            theta: vec![0.0; layers],
            w: uniform_init(rng, hidden, hidden),
            b: 0.0,
        }
    }
}

impl ParamSet for LayerLRParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.theta, &self.w, std::slice::from_ref(&self.b)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.theta, &mut self.w, std::slice::from_mut(&mut self.b)]
    }
}

impl LayerProbe for LayerLRParams {
    fn layers(&self) -> usize {
        self.theta.len()
    }

    fn hidden(&self) -> usize {
        self.w.len()
    }

    fn mask_len(&self) -> usize {
        self.w.len()
    }

    fn layer_weights(&self) -> Vec<f64> {
        softmax(&self.theta)
    }

    fn logits(&self, inputs: &[&[f64]], masks: Option<&[Vec<f64>]>) -> Vec<f64> {
        let alpha = self.layer_weights();
        let h = self.hidden();
        inputs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let mut hbar = blend(&alpha, x, h);
                apply_mask(&mut hbar, masks.map(|m| &m[i]));
                dot(&self.w, &hbar) + self.b
            })
            .collect()
    }

    fn backward(&self, inputs: &[&[f64]], masks: Option<&[Vec<f64>]>, dlogits: &[f64]) -> Self {
        let alpha = self.layer_weights();
        let h = self.hidden();
        let mut g = self.zeros_like();
        let mut grad_alpha = vec![0.0; alpha.len()];
        let mut dhbar = vec![0.0; h];
        for (i, (x, &d)) in inputs.iter().zip(dlogits).enumerate() {
            let mask = masks.map(|m| &m[i]);
            let mut hbar = blend(&alpha, x, h);
            apply_mask(&mut hbar, mask);
            g.w.iter_mut().zip(&hbar).for_each(|(gw, hv)| *gw += d * hv);
            g.b += d;
            dhbar.iter_mut().zip(&self.w).for_each(|(o, w)| *o = d * w);
            apply_mask(&mut dhbar, mask);
            for (ga, row) in grad_alpha.iter_mut().zip(x.chunks_exact(h)) {
                *ga += dot(row, &dhbar);
            }
        }
        g.theta = softmax_backward(&alpha, &grad_alpha);
        g
    }
}

/// Logit of the layer-weighted linear probe on a raw stack (no dropout
/// unless a mask is supplied; mask entries are 0 or 1/keep).
pub fn forward_layer_lr(tensor: &LayerStack, params: &LayerLRParams, dropout_mask: Option<&[f64]>) -> Result<f64> {
    check_stack(tensor, params.layers(), params.hidden())?;
    if let Some(m) = dropout_mask {
        if m.len() != params.hidden() {
            return Err(Error::dims(params.hidden(), m.len()));
        }
    }
    let x = l2_normalize_layers(tensor);
    let masks = dropout_mask.map(|m| vec![m.to_vec()]);
    Ok(params.logits(&[&x], masks.as_deref())[0])
}

/// Sparsemax-weighted layer blend followed by `Linear → GELU → Dropout → Linear`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMLPParams {
    pub theta: Vec<f64>,
    /// Row-major `m x H`.
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b: f64,
    pub m: usize,
}

impl LayerMLPParams {
    pub fn init<R: Rng>(layers: usize, hidden: usize, m: usize, rng: &mut R) -> Self {
        let w1 = uniform_init(rng, m * hidden, hidden);
        let w2 = uniform_init(rng, m, m);
        Self { theta: vec![0.0; layers], w1, w2, b: 0.0, m }
    }

    fn project(&self, hbar: &[f64]) -> Vec<f64> {
        self.w1.chunks_exact(hbar.len()).map(|row| dot(row, hbar)).collect()
    }
}

impl ParamSet for LayerMLPParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.theta, &self.w1, &self.w2, std::slice::from_ref(&self.b)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.theta, &mut self.w1, &mut self.w2, std::slice::from_mut(&mut self.b)]
    }
}

impl LayerProbe for LayerMLPParams {
    fn layers(&self) -> usize {
        self.theta.len()
    }

    fn hidden(&self) -> usize {
        self.w1.len() / self.m
    }

    fn mask_len(&self) -> usize {
        self.m
    }

    fn layer_weights(&self) -> Vec<f64> {
        sparsemax(&self.theta)
    }

    fn logits(&self, inputs: &[&[f64]], masks: Option<&[Vec<f64>]>) -> Vec<f64> {
        let alpha = self.layer_weights();
        let h = self.hidden();
        inputs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let hbar = blend(&alpha, x, h);
                let mut act: Vec<f64> = self.project(&hbar).into_iter().map(gelu).collect();
                apply_mask(&mut act, masks.map(|m| &m[i]));
                dot(&self.w2, &act) + self.b
            })
            .collect()
    }

    fn backward(&self, inputs: &[&[f64]], masks: Option<&[Vec<f64>]>, dlogits: &[f64]) -> Self {
        let alpha = self.layer_weights();
        let h = self.hidden();
        let mut g = self.zeros_like();
        let mut grad_alpha = vec![0.0; alpha.len()];
        for (i, (x, &d)) in inputs.iter().zip(dlogits).enumerate() {
            let mask = masks.map(|m| &m[i]);
            let hbar = blend(&alpha, x, h);
            let pre = self.project(&hbar);
            let mut act: Vec<f64> = pre.iter().map(|&u| gelu(u)).collect();
            apply_mask(&mut act, mask);
            g.w2.iter_mut().zip(&act).for_each(|(gw, a)| *gw += d * a);
            g.b += d;

            let mut dpre: Vec<f64> = self.w2.iter().map(|w| d * w).collect();
            apply_mask(&mut dpre, mask);
            dpre.iter_mut().zip(&pre).for_each(|(dp, &u)| *dp *= gelu_grad(u));

            let mut dhbar = vec![0.0; h];
            for ((gw_row, w_row), &dp) in g.w1.chunks_exact_mut(h).zip(self.w1.chunks_exact(h)).zip(&dpre) {
                if dp == 0.0 {
                    continue;
                }
                gw_row.iter_mut().zip(&hbar).for_each(|(o, hv)| *o += dp * hv);
                dhbar.iter_mut().zip(w_row).for_each(|(o, w)| *o += dp * w);
            }
            for (ga, (a, row)) in grad_alpha.iter_mut().zip(alpha.iter().zip(x.chunks_exact(h))) {
                // Off-support layers receive zero gradient through sparsemax anyway.
                if *a > 0.0 {
                    *ga += dot(row, &dhbar);
                }
            }
        }
        g.theta = sparsemax_backward(&alpha, &grad_alpha);
        g
    }
}

pub fn forward_layer_mlp(tensor: &LayerStack, params: &LayerMLPParams, dropout_mask: Option<&[f64]>) -> Result<f64> {
    check_stack(tensor, params.layers(), params.hidden())?;
    if let Some(m) = dropout_mask {
        if m.len() != params.m {
            return Err(Error::dims(params.m, m.len()));
        }
    }
    let x = l2_normalize_layers(tensor);
    let masks = dropout_mask.map(|m| vec![m.to_vec()]);
    Ok(params.logits(&[&x], masks.as_deref())[0])
}

// ---------------------------------------------------------------------------

/// A trained probe of any variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", content = "params")]
pub enum Probe {
    #[serde(rename = "final-lr")]
    FinalLr(FinalLRParams),
    #[serde(rename = "layer-lr")]
    LayerLr(LayerLRParams),
    #[serde(rename = "layer-mlp")]
    LayerMlp(LayerMLPParams),
}

impl Probe {
    pub fn variant(&self) -> Variant {
        match self {
            Probe::FinalLr(_) => Variant::FinalLr,
            Probe::LayerLr(_) => Variant::LayerLr,
            Probe::LayerMlp(_) => Variant::LayerMlp,
        }
    }

    /// Layer count the probe expects; `None` for the final-layer probe, which
    /// accepts any depth.
    pub fn layers(&self) -> Option<usize> {
        match self {
            Probe::FinalLr(_) => None,
            Probe::LayerLr(p) => Some(p.layers()),
            Probe::LayerMlp(p) => Some(p.layers()),
        }
    }

    pub fn hidden(&self) -> usize {
        match self {
            Probe::FinalLr(p) => p.hidden(),
            Probe::LayerLr(p) => p.hidden(),
            Probe::LayerMlp(p) => p.hidden(),
        }
    }

    pub fn bottleneck(&self) -> Option<usize> {
        match self {
            Probe::LayerMlp(p) => Some(p.m),
            _ => None,
        }
    }

    /// Aggregation weights over layers; `None` for the final-layer probe.
    pub fn layer_weights(&self) -> Option<Vec<f64>> {
        match self {
            Probe::FinalLr(_) => None,
            Probe::LayerLr(p) => Some(p.layer_weights()),
            Probe::LayerMlp(p) => Some(p.layer_weights()),
        }
    }

    pub fn logit(&self, tensor: &LayerStack) -> Result<f64> {
        match self {
            Probe::FinalLr(p) => {
                if tensor.hidden() != p.hidden() {
                    return Err(Error::dims(p.hidden(), tensor.hidden()));
                }
                Ok(p.logit_standardized(&p.standardize(tensor.last_row())))
            }
            Probe::LayerLr(p) => forward_layer_lr(tensor, p, None),
            Probe::LayerMlp(p) => forward_layer_mlp(tensor, p, None),
        }
    }

    /// Probability of parametric retrieval, without dropout.
    pub fn score(&self, tensor: &LayerStack) -> Result<f64> {
        self.logit(tensor).map(sigmoid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stack(rows: &[&[f32]]) -> LayerStack {
        LayerStack::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn final_lr_examples() {
        let t = stack(&[&[1.0, 2.0], &[3.0, -4.0]]);
        let mut p = FinalLRParams::identity(2);
        assert_eq!(forward_final_lr(&t, &p).unwrap(), 0.5);
        p.b = 3f64.ln();
        assert!((forward_final_lr(&t, &p).unwrap() - 0.75).abs() < 1e-15);
        let bad = stack(&[&[1.0, 2.0, 3.0]]);
        assert!(forward_final_lr(&bad, &p).is_err());
    }

    #[test]
    fn final_lr_monotone_in_score() {
        let mut p = FinalLRParams::identity(1);
        p.w = vec![1.0];
        let ps: Vec<f64> = [-2.0f32, -0.5, 0.0, 0.3, 4.0]
            .iter()
            .map(|&x| forward_final_lr(&stack(&[&[x]]), &p).unwrap())
            .collect();
        assert!(ps.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn layer_lr_dominant_layer() {
        let t = stack(&[&[1.0, 0.0, 2.0], &[0.0, 3.0, 4.0], &[5.0, 1.0, 1.0]]);
        let p = LayerLRParams { theta: vec![0.0, 50.0, 0.0], w: vec![0.3, -0.7, 1.1], b: 0.2 };
        let z = forward_layer_lr(&t, &p, None).unwrap();
        let expected = 0.3 * 0.0 - 0.7 * 0.6 + 1.1 * 0.8 + 0.2;
        assert!((z - expected).abs() < 1e-12);
    }

    #[test]
    fn layer_lr_identical_rows_and_identity_mask() {
        let t = stack(&[&[1.0, 2.0, 2.0], &[1.0, 2.0, 2.0]]);
        let p = LayerLRParams { theta: vec![0.0, 0.0], w: vec![3.0, 0.0, 0.0], b: 0.0 };
        let z = forward_layer_lr(&t, &p, None).unwrap();
        assert!((z - 1.0).abs() < 1e-15);
        let ones = vec![1.0; 3];
        assert_eq!(forward_layer_lr(&t, &p, Some(&ones)).unwrap(), z);
    }

    #[test]
    fn mlp_zero_projection_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = LayerMLPParams::init(3, 4, 5, &mut rng);
        p.w1.fill(0.0);
        p.b = -0.37;
        let t = stack(&[&[1.0, 2.0, 3.0, 4.0], &[-1.0, 0.5, 0.0, 2.0], &[9.0, 9.0, 9.0, 9.0]]);
        assert_eq!(forward_layer_mlp(&t, &p, None).unwrap(), -0.37);
    }

    #[test]
    fn mlp_sparse_support_selects_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = LayerMLPParams::init(3, 2, 4, &mut rng);
        p.theta = vec![2.0, 0.0, 0.0];
        assert_eq!(p.layer_weights(), vec![1.0, 0.0, 0.0]);
        let t = stack(&[&[3.0, 4.0], &[100.0, -7.0], &[0.1, 0.2]]);
        let only = stack(&[&[3.0, 4.0], &[0.0, 0.0], &[0.0, 0.0]]);
        let z = forward_layer_mlp(&t, &p, None).unwrap();
        let z_only = forward_layer_mlp(&only, &p, None).unwrap();
        assert!((z - z_only).abs() < 1e-12);
    }

    #[test]
    fn scaling_a_row_is_invisible() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = LayerMLPParams::init(2, 3, 4, &mut rng);
        let a = stack(&[&[1.0, -2.0, 0.5], &[0.3, 0.3, 0.9]]);
        let b = stack(&[&[2.0, -4.0, 1.0], &[0.3, 0.3, 0.9]]);
        let za = forward_layer_mlp(&a, &p, None).unwrap();
        let zb = forward_layer_mlp(&b, &p, None).unwrap();
        assert!((za - zb).abs() < 1e-12);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in [Variant::FinalLr, Variant::LayerLr, Variant::LayerMlp] {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(Variant::from_tag(v.tag()), Some(v));
        }
    }
}
