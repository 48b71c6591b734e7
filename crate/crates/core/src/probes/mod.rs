// SPDX-License-Identifier: MIT OR Apache-2.0

//! The three attribution probes: final-layer logistic regression,
//! layer-weighted logistic regression (softmax over layers) and the
//! layer-weighted MLP (sparsemax over layers).

mod io;
mod loss;
mod model;
pub mod ops;

pub use io::{decode_probe, encode_probe, read_probe, write_probe, PROBE_MAGIC, PROBE_VERSION};
pub use loss::{bce_logits_loss, LossOutput};
pub use model::{
    forward_final_lr, forward_layer_lr, forward_layer_mlp, FinalLRParams, LayerLRParams,
    LayerMLPParams, LayerProbe, ParamSet, Probe, Variant,
};
pub use ops::{gelu, l2_normalize_layers, softmax, sparsemax};
