use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use crate::error::Result;
use crate::rng::{self, Rng};

/// Frozen weights of one decoder block (pre-norm GPT-2 layout).
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub w_qkv: Array2<f64>,
    pub b_qkv: Array1<f64>,
    pub w_attn: Array2<f64>,
    pub b_attn: Array1<f64>,
    pub ln_cross_g: Array1<f64>,
    pub ln_cross_b: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w_fc: Array2<f64>,
    pub b_fc: Array1<f64>,
    pub w_proj: Array2<f64>,
    pub b_proj: Array1<f64>,
}

/// Everything that never receives a cross-attention gradient: the encoder
/// stub projection, token and position embeddings (the token embedding
/// doubles as the output head), decoder blocks and the final norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    /// `image_dim x (n_patches * d_encoder)`; patch `p` reads columns `p*d_enc..`.
    pub patch_proj: Array2<f64>,
    pub wte: Array2<f64>,
    pub wpe: Array2<f64>,
    pub layers: Vec<DecoderLayer>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
}

/// Trainable multi-head cross-attention of one decoder layer. Bias free.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttention {
    /// Per head, `d_model x d_cross`.
    pub wq: Vec<Array2<f64>>,
    /// Per head, `d_encoder x d_cross`.
    pub wk: Vec<Array2<f64>>,
    /// Per head, `d_encoder x d_cross`.
    pub wv: Vec<Array2<f64>>,
    /// `(n_heads * d_cross) x d_model`.
    pub wo: Array2<f64>,
}

/// All trainable tensors; the same shape doubles as a gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub layers: Vec<CrossAttention>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Seeds {
    pub backbone: u64,
    pub theta: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub seeds: Seeds,
    pub backbone: Backbone,
    pub theta: Theta,
}

const INIT_STD: f64 = 0.02;

/// Gaussian draws, or zeros when no generator is given.
fn gaussian(rng: &mut Option<Rng>, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    match rng {
        Some(rng) => Array2::from_shape_simple_fn((rows, cols), || std * rng::normal(rng)),
        None => Array2::zeros((rows, cols)),
    }
}

impl Backbone {
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        Self::build(config, Some(rng::seeded(seed)))
    }

    fn build(config: &ModelConfig, mut rng: Option<Rng>) -> Self {
        let (d, f) = (config.d_model, config.d_ffn);
        let resid_std = INIT_STD / (2.0 * config.n_layers as f64).sqrt();
        let patch_proj = gaussian(&mut rng, config.image_dim, config.n_patches * config.d_encoder, 1.0);
        let wte = gaussian(&mut rng, config.vocab_size, d, 1.0 / (d as f64).sqrt());
        let wpe = gaussian(&mut rng, config.max_context, d, 0.5 / (d as f64).sqrt());
        let layers = (0..config.n_layers)
            .map(|_| DecoderLayer {
                ln1_g: Array1::ones(d),
                ln1_b: Array1::zeros(d),
                w_qkv: gaussian(&mut rng, d, 3 * d, INIT_STD),
                b_qkv: Array1::zeros(3 * d),
                w_attn: gaussian(&mut rng, d, d, resid_std),
                b_attn: Array1::zeros(d),
                ln_cross_g: Array1::ones(d),
                ln_cross_b: Array1::zeros(d),
                ln2_g: Array1::ones(d),
                ln2_b: Array1::zeros(d),
                w_fc: gaussian(&mut rng, d, f, INIT_STD),
                b_fc: Array1::zeros(f),
                w_proj: gaussian(&mut rng, f, d, resid_std),
                b_proj: Array1::zeros(d),
            })
            .collect();
        Self {
            patch_proj,
            wte,
            wpe,
            layers,
            lnf_g: Array1::ones(d),
            lnf_b: Array1::zeros(d),
        }
    }

    /// Every tensor as `(name, shape, data)` in canonical order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = vec![
            ("patch_proj".into(), self.patch_proj.shape().to_vec(), slice2(&self.patch_proj)),
            ("wte".into(), self.wte.shape().to_vec(), slice2(&self.wte)),
            ("wpe".into(), self.wpe.shape().to_vec(), slice2(&self.wpe)),
        ];
        for (l, layer) in self.layers.iter().enumerate() {
            for (name, t) in layer.named1() {
                out.push((format!("layer.{l}.{name}"), vec![t.len()], slice1(t)));
            }
            for (name, t) in layer.named2() {
                out.push((format!("layer.{l}.{name}"), t.shape().to_vec(), slice2(t)));
            }
        }
        out.push(("lnf_g".into(), vec![self.lnf_g.len()], slice1(&self.lnf_g)));
        out.push(("lnf_b".into(), vec![self.lnf_b.len()], slice1(&self.lnf_b)));
        out
    }

    /// Mutable views matching [`Backbone::tensors`] order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.patch_proj.as_slice_mut().unwrap(),
            self.wte.as_slice_mut().unwrap(),
            self.wpe.as_slice_mut().unwrap(),
        ];
        for layer in &mut self.layers {
            let DecoderLayer {
                ln1_g,
                ln1_b,
                w_qkv,
                b_qkv,
                w_attn,
                b_attn,
                ln_cross_g,
                ln_cross_b,
                ln2_g,
                ln2_b,
                w_fc,
                b_fc,
                w_proj,
                b_proj,
            } = layer;
            for t in [ln1_g, ln1_b, b_qkv, b_attn, ln_cross_g, ln_cross_b, ln2_g, ln2_b, b_fc, b_proj] {
                out.push(t.as_slice_mut().unwrap());
            }
            for t in [w_qkv, w_attn, w_fc, w_proj] {
                out.push(t.as_slice_mut().unwrap());
            }
        }
        out.push(self.lnf_g.as_slice_mut().unwrap());
        out.push(self.lnf_b.as_slice_mut().unwrap());
        out
    }

    /// SHA-256 over names, shapes and little-endian values of every tensor.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, shape, data) in self.tensors() {
            h.update(name.as_bytes());
            for s in shape {
                h.update((s as u64).to_le_bytes());
            }
            for x in data {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }
}

impl DecoderLayer {
    fn named1(&self) -> [(&'static str, &Array1<f64>); 10] {
        [
            ("ln1_g", &self.ln1_g),
            ("ln1_b", &self.ln1_b),
            ("b_qkv", &self.b_qkv),
            ("b_attn", &self.b_attn),
            ("ln_cross_g", &self.ln_cross_g),
            ("ln_cross_b", &self.ln_cross_b),
            ("ln2_g", &self.ln2_g),
            ("ln2_b", &self.ln2_b),
            ("b_fc", &self.b_fc),
            ("b_proj", &self.b_proj),
        ]
    }

    fn named2(&self) -> [(&'static str, &Array2<f64>); 4] {
        [
            ("w_qkv", &self.w_qkv),
            ("w_attn", &self.w_attn),
            ("w_fc", &self.w_fc),
            ("w_proj", &self.w_proj),
        ]
    }
}

fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

impl Theta {
    pub fn init(config: &ModelConfig, seed: u64) -> Self {
        Self::build(config, Some(rng::seeded(seed)))
    }

    fn build(config: &ModelConfig, mut rng: Option<Rng>) -> Self {
        let (d, e, k, h) = (config.d_model, config.d_encoder, config.d_cross, config.n_heads);
        let out_std = INIT_STD / (2.0 * config.n_layers as f64).sqrt();
        let layers = (0..config.n_layers)
            .map(|_| {
                let mut wq = Vec::with_capacity(h);
                let mut wk = Vec::with_capacity(h);
                let mut wv = Vec::with_capacity(h);
                for _ in 0..h {
                    wq.push(gaussian(&mut rng, d, k, INIT_STD));
                    wk.push(gaussian(&mut rng, e, k, INIT_STD));
                    wv.push(gaussian(&mut rng, e, k, INIT_STD));
                }
                let wo = gaussian(&mut rng, h * k, d, out_std);
                CrossAttention { wq, wk, wv, wo }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Tensors in the canonical order of `theta_shapes`.
    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for h in 0..layer.wq.len() {
                out.push((format!("cross.{l}.wq.{h}"), &layer.wq[h]));
                out.push((format!("cross.{l}.wk.{h}"), &layer.wk[h]));
                out.push((format!("cross.{l}.wv.{h}"), &layer.wv[h]));
            }
            out.push((format!("cross.{l}.wo"), &layer.wo));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            let CrossAttention { wq, wk, wv, wo } = layer;
            for ((q, k), v) in wq.iter_mut().zip(wk.iter_mut()).zip(wv.iter_mut()) {
                out.push(q);
                out.push(k);
                out.push(v);
            }
            out.push(wo);
        }
        out
    }

    pub fn element_count(&self) -> u64 {
        self.tensors().iter().map(|(_, t)| t.len() as u64).sum()
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Theta, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(scale, b.1);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }
}

impl ModelParams {
    pub fn init(config: ModelConfig, seeds: Seeds) -> Result<Self> {
        config.validate()?;
        let backbone = Backbone::init(&config, seeds.backbone);
        let theta = Theta::init(&config, seeds.theta);
        Ok(Self {
            config,
            seeds,
            backbone,
            theta,
        })
    }

    /// Correctly shaped parameters with every matrix zero; filled in by loaders.
    pub(crate) fn zeroed(config: ModelConfig, seeds: Seeds) -> Self {
        Self {
            backbone: Backbone::build(&config, None),
            theta: Theta::build(&config, None),
            config,
            seeds,
        }
    }

    /// Fresh cross-attention weights over the same frozen backbone.
    pub fn with_fresh_theta(&self, seed: u64) -> Self {
        Self {
            config: self.config.clone(),
            seeds: Seeds {
                backbone: self.seeds.backbone,
                theta: seed,
            },
            backbone: self.backbone.clone(),
            theta: Theta::init(&self.config, seed),
        }
    }

    /// Same frozen backbone with freshly initialized cross-attention of width `d`.
    pub fn with_cross_dim(&self, d: usize, seed: u64) -> Result<Self> {
        let config = ModelConfig {
            d_cross: d,
            ..self.config.clone()
        };
        config.validate()?;
        Ok(Self {
            theta: Theta::init(&config, seed),
            config,
            seeds: Seeds {
                backbone: self.seeds.backbone,
                theta: seed,
            },
            backbone: self.backbone.clone(),
        })
    }

    pub fn frozen_digest(&self) -> String {
        self.backbone.digest()
    }
}
