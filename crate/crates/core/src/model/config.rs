use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the encoder stub, the frozen decoder and its cross-attention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    /// Decoder width.
    pub d_model: usize,
    /// Width of each encoder state.
    pub d_encoder: usize,
    /// Per-head cross-attention projection width (`d_k = d_v`).
    pub d_cross: usize,
    pub vocab_size: usize,
    pub max_context: usize,
    pub n_patches: usize,
    /// Width of the image embedding fed to the encoder stub.
    pub image_dim: usize,
    /// Hidden width of the decoder feed-forward blocks.
    pub d_ffn: usize,
}

impl ModelConfig {
    /// GPT-2 Base sized decoder with a 12-head cross-attention per layer.
    pub fn gpt2_base(d_cross: usize) -> Self {
        Self {
            n_layers: 12,
            n_heads: 12,
            d_model: 768,
            d_encoder: 768,
            d_cross,
            vocab_size: 50257,
            max_context: 1024,
            n_patches: 50,
            image_dim: 1024,
            d_ffn: 3072,
        }
    }

    /// Small decoder for desk-scale experiments.
    pub fn toy(n_layers: usize, n_heads: usize, d_model: usize, d_cross: usize, vocab_size: usize) -> Self {
        Self {
            n_layers,
            n_heads,
            d_model,
            d_encoder: d_model,
            d_cross,
            vocab_size,
            max_context: 96,
            n_patches: 8,
            image_dim: 32,
            d_ffn: 4 * d_model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_encoder", self.d_encoder),
            ("d_cross", self.d_cross),
            ("vocab_size", self.vocab_size),
            ("max_context", self.max_context),
            ("n_patches", self.n_patches),
            ("image_dim", self.image_dim),
            ("d_ffn", self.d_ffn),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidArgument(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size <= crate::tokenizer::UNK as usize {
            return Err(Error::InvalidArgument("vocab_size must exceed the reserved ids".into()));
        }
        Ok(())
    }

    /// Trainable cross-attention parameter count, `L*h*d*(2*d_enc + 2*d_dec)`.
    pub fn trainable_params(&self) -> u64 {
        count_trainable_params(self)
    }
}

/// Closed-form count of the bias-free cross-attention weights.
pub fn count_trainable_params(config: &ModelConfig) -> u64 {
    let (l, h, d) = (config.n_layers as u64, config.n_heads as u64, config.d_cross as u64);
    l * h * d * (2 * config.d_encoder as u64 + 2 * config.d_model as u64)
}

/// Name and shape of every trainable tensor, in canonical order.
pub fn theta_shapes(config: &ModelConfig) -> Vec<(String, [usize; 2])> {
    let mut out = Vec::new();
    for l in 0..config.n_layers {
        for h in 0..config.n_heads {
            out.push((format!("cross.{l}.wq.{h}"), [config.d_model, config.d_cross]));
            out.push((format!("cross.{l}.wk.{h}"), [config.d_encoder, config.d_cross]));
            out.push((format!("cross.{l}.wv.{h}"), [config.d_encoder, config.d_cross]));
        }
        out.push((format!("cross.{l}.wo"), [config.n_heads * config.d_cross, config.d_model]));
    }
    out
}
