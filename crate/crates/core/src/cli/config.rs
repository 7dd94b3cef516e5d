use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::{PretrainConfig, TrainingConfig};

/// Run config for `train` and `ablate`. Relative paths resolve against the
/// directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Training datastore directory; also supplies the vocabulary.
    pub store: PathBuf,
    pub train_images: PathBuf,
    pub train_references: PathBuf,
    pub val_images: PathBuf,
    pub val_references: PathBuf,
    /// Output directory.
    pub out: PathBuf,
    /// Training example `i` owns store record `i`, which its retrieval skips.
    #[serde(default = "yes")]
    pub self_exclusion: bool,
    #[serde(default)]
    pub model: ModelSection,
    pub pretrain: Option<PretrainSection>,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub ablation: AblationSection,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_cross: usize,
    pub n_patches: usize,
    pub max_context: usize,
    pub backbone_seed: u64,
    pub theta_seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            d_model: 64,
            d_cross: 16,
            n_patches: 8,
            max_context: 96,
            backbone_seed: 1,
            theta_seed: 2,
        }
    }
}

impl ModelSection {
    pub fn to_config(&self, vocab_size: usize, image_dim: usize) -> ModelConfig {
        let mut c = ModelConfig::toy(self.layers, self.heads, self.d_model, self.d_cross, vocab_size);
        c.n_patches = self.n_patches;
        c.max_context = self.max_context;
        c.image_dim = image_dim;
        c
    }
}

/// Decoder language-model pretraining on prompt-formatted caption text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    /// Record files supplying the text.
    pub records: Vec<PathBuf>,
    #[serde(default = "default_docs")]
    pub docs: usize,
    #[serde(default = "default_max_k")]
    pub max_k: usize,
    #[serde(default = "default_pre_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_pre_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_docs() -> usize {
    3000
}
fn default_max_k() -> usize {
    4
}
fn default_pre_lr() -> f64 {
    PretrainConfig::default().learning_rate
}
fn default_batch() -> usize {
    PretrainConfig::default().batch_size
}
fn default_pre_epochs() -> usize {
    2
}

impl PretrainSection {
    pub fn optimizer(&self) -> PretrainConfig {
        PretrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub grid: Vec<usize>,
    /// Also train a retrieval model on blank images for each d.
    pub blank_image_variant: bool,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            grid: vec![4, 8, 16, 32, 64],
            blank_image_variant: true,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.store);
        fix(&mut cfg.train_images);
        fix(&mut cfg.train_references);
        fix(&mut cfg.val_images);
        fix(&mut cfg.val_references);
        fix(&mut cfg.out);
        if let Some(p) = cfg.pretrain.as_mut() {
            p.records.iter_mut().for_each(fix);
        }
        cfg.training.validate()?;
        Ok(cfg)
    }
}
