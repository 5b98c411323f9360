//! Transformer architecture configuration and the named presets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::HeadKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    /// Stacked attention+FFN blocks, `L`.
    pub layers: usize,
    /// Representation width, `D`.
    pub dim: usize,
    /// Attention heads per layer, `A`; `D` must be divisible by `A`.
    pub heads: usize,
    /// FFN hidden units, `N`.
    pub ffn_dim: usize,
    pub dropout_attn: f64,
    pub dropout_ffn: f64,
    /// Longest sequence the model accepts.
    pub max_len: usize,
    pub head: HeadKind,
}

impl TransformerConfig {
    /// The full-size configuration: 12 layers, width 192, 3 heads, 768
    /// hidden units, 0.1 dropout.
    pub fn paper() -> Self {
        TransformerConfig {
            layers: 12,
            dim: 192,
            heads: 3,
            ffn_dim: 768,
            dropout_attn: 0.1,
            dropout_ffn: 0.1,
            max_len: 64,
            head: HeadKind::TwoStage,
        }
    }

    /// The small-corpus configuration found by the from-scratch architecture
    /// ablation: 4 layers, width 64, 2 heads, 256 hidden units.
    pub fn small() -> Self {
        TransformerConfig {
            layers: 4,
            dim: 64,
            heads: 2,
            ffn_dim: 256,
            dropout_attn: 0.1,
            dropout_ffn: 0.1,
            max_len: 64,
            head: HeadKind::TwoStage,
        }
    }

    /// A deliberately tiny configuration for tests and quick experiments.
    pub fn tiny() -> Self {
        TransformerConfig {
            layers: 2,
            dim: 32,
            heads: 2,
            ffn_dim: 64,
            dropout_attn: 0.1,
            dropout_ffn: 0.1,
            max_len: 64,
            head: HeadKind::TwoStage,
        }
    }

    pub fn by_preset(name: &str) -> Option<Self> {
        match name {
            "career-paper" => Some(Self::paper()),
            "career-small" => Some(Self::small()),
            "career-tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    /// Per-head width `K = D / A`.
    pub fn head_width(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::config("need at least one layer"));
        }
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::config(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.ffn_dim == 0 {
            return Err(Error::config("ffn_dim must be positive"));
        }
        if self.dim % 2 != 0 {
            return Err(Error::config("dim must be even for sinusoidal positions"));
        }
        for (what, p) in [("dropout_attn", self.dropout_attn), ("dropout_ffn", self.dropout_ffn)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(format!("{what} must be in [0, 1), got {p}")));
            }
        }
        if self.max_len == 0 {
            return Err(Error::config("max_len must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for name in ["career-paper", "career-small", "career-tiny"] {
            TransformerConfig::by_preset(name).unwrap().validate().unwrap();
        }
        assert!(TransformerConfig::by_preset("nope").is_none());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = TransformerConfig::tiny();
        c.heads = 5; // 32 % 5 != 0
        assert!(c.validate().is_err());
        let mut c = TransformerConfig::tiny();
        c.dropout_attn = 1.0;
        assert!(c.validate().is_err());
    }
}
