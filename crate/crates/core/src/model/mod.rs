//! Frozen decoder with trainable cross-attention.

pub mod beam;
pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod ops;
pub mod params;

pub use beam::{beam_search, greedy_decode, Hypothesis};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{count_trainable_params, theta_shapes, ModelConfig};
pub use forward::{caption_loss, caption_loss_grad, cross_attention, EncoderStates, ForwardCache, GradMode, Gradients};
pub use params::{Backbone, CrossAttention, DecoderLayer, ModelParams, Seeds, Theta};
