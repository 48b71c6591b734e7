// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::probes::ParamSet;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// AdamW with decoupled weight decay. Moment buffers mirror the parameter set.
#[derive(Debug, Clone)]
pub struct AdamW<P: ParamSet> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: P,
    v: P,
}

impl<P: ParamSet> AdamW<P> {
    pub fn new(params: &P) -> Self {
        Self {
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// `θ ← θ − lr·m̂/(√v̂ + ε) − lr·wd·θ`, applied to every parameter array.
    pub fn step(&mut self, params: &mut P, grads: &P, lr: f64, weight_decay: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let tensors = params.tensors_mut();
        let grads = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in tensors.into_iter().zip(grads).zip(ms).zip(vs) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps) + lr * weight_decay * p[i];
            }
        }
    }
}
