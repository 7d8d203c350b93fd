//! Patch transformer encoder, edge-aware graph attention and dual head.

mod network;
mod params;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use network::{
    bce_weighted, dropout, egat_layer, encode_static, encode_temporal, forward, huber_mean, loss, predict, Forward,
    GraphInput, LossParts, Prediction,
};
pub use params::{init_params, prior_logit, Bound, ModelParams};

use crate::{EagleError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    /// Static time-mean features instead of the patch encoder.
    A1NoTemporal,
    /// Attention scores ignore edge features.
    A2NoEdge,
    /// Classification head and loss only.
    A3SingleTask,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::A1NoTemporal, Ablation::A2NoEdge, Ablation::A3SingleTask];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::A1NoTemporal => "a1_no_temporal",
            Ablation::A2NoEdge => "a2_no_edge",
            Ablation::A3SingleTask => "a3_single_task",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Ablation::Full => "EAGLE",
            Ablation::A1NoTemporal => "A1",
            Ablation::A2NoEdge => "A2",
            Ablation::A3SingleTask => "A3",
        }
    }

    pub fn uses_temporal(self) -> bool {
        self != Ablation::A1NoTemporal
    }

    pub fn uses_edges(self) -> bool {
        self != Ablation::A2NoEdge
    }

    pub fn has_regression(self) -> bool {
        self != Ablation::A3SingleTask
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = EagleError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == key || a.short().to_ascii_lowercase() == key || (key == "eagle" && *a == Ablation::Full))
            .ok_or_else(|| EagleError::Config(format!("unknown ablation {s:?} (full, a1, a2, a3)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub window: usize,
    pub patch_len: usize,
    pub node_dim: usize,
    pub d_model: usize,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub ffn_mult: usize,
    pub gat_layers: usize,
    pub gat_heads: usize,
    pub edge_dim: usize,
    pub head_hidden: usize,
    pub lambda: f64,
    pub pos_weight: f64,
    pub huber_delta: f64,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub elu_alpha: f64,
    pub ln_eps: f64,
    pub prob_clamp: f64,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            window: 14,
            patch_len: 7,
            node_dim: 5,
            d_model: 64,
            encoder_layers: 2,
            encoder_heads: 2,
            ffn_mult: 2,
            gat_layers: 2,
            gat_heads: 4,
            edge_dim: crate::graph::EDGE_DIM,
            head_hidden: 32,
            lambda: 0.7,
            pos_weight: 5.0,
            huber_delta: 1.0,
            dropout: 0.1,
            leaky_slope: 0.2,
            elu_alpha: 1.0,
            ln_eps: 1e-5,
            prob_clamp: 1e-7,
            ablation: Ablation::Full,
        }
    }
}

impl ModelConfig {
    pub fn n_patches(&self) -> usize {
        self.window / self.patch_len
    }

    pub fn with_ablation(&self, ablation: Ablation) -> Self {
        ModelConfig {
            ablation,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(EagleError::Config(format!("model: {m}")));
        if self.patch_len == 0 || self.window == 0 || self.window % self.patch_len != 0 {
            return bad(format!("window {} is not divisible by patch_len {}", self.window, self.patch_len));
        }
        if self.d_model == 0 || self.encoder_heads == 0 || self.gat_heads == 0 {
            return bad("d_model and head counts must be positive".into());
        }
        if self.d_model % self.encoder_heads != 0 || self.d_model % self.gat_heads != 0 {
            return bad(format!(
                "d_model {} must be divisible by encoder_heads {} and gat_heads {}",
                self.d_model, self.encoder_heads, self.gat_heads
            ));
        }
        if self.node_dim == 0 || self.edge_dim == 0 || self.head_hidden == 0 || self.ffn_mult == 0 {
            return bad("widths must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if !(self.pos_weight > 0.0) {
            return bad(format!("pos_weight {} must be positive", self.pos_weight));
        }
        if !(self.huber_delta > 0.0) {
            return bad(format!("huber_delta {} must be positive", self.huber_delta));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.prob_clamp > 0.0 && self.prob_clamp < 0.5) {
            return bad(format!("prob_clamp {} outside (0, 0.5)", self.prob_clamp));
        }
        Ok(())
    }
}
