//! Fitting the cross-attention weights.
//!
//! The optimizer is AdamW in its decoupled form: every step first shrinks
//! the weights by `lr * weight_decay` and then applies the bias-corrected
//! moment update `lr * m_hat / (sqrt(v_hat) + eps)`.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::caption::{CaptionSettings, Captioner};
use crate::datastore::{Datastore, RawCaption, DEFAULT_K};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalExample};
use crate::model::checkpoint::save_checkpoint;
use crate::model::{EncoderStates, GradMode, ModelParams, Theta};
use crate::prompt::make_training_instance;
use crate::rng;
use crate::tokenizer::Tokenizer;
use crate::vector_index::FlatIndex;

pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// One update of `params` (a fixed list of tensors) along `grads`.
    pub fn update(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        assert_eq!(params.len(), grads.len(), "one gradient per tensor");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (lr, b1, b2) = (self.learning_rate, self.beta1, self.beta2);
        let decay = 1.0 - lr * self.weight_decay;
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] = p[i] * decay - lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }

    pub fn update_theta(&mut self, theta: &mut Theta, grads: &Theta) {
        let g: Vec<&[f64]> = grads.tensors().into_iter().map(|(_, t)| t.as_slice().unwrap()).collect();
        let p: Vec<&mut [f64]> = theta.tensors_mut().into_iter().map(|t| t.as_slice_mut().unwrap()).collect();
        self.update(p, g);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMetric {
    /// Lowest validation loss.
    Loss,
    /// Highest validation CIDEr of beam-decoded captions.
    Cider,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub retrieval_enabled: bool,
    pub blank_image: bool,
    pub weight_decay: f64,
    pub selection_metric: SelectionMetric,
    /// Captions retrieved per training image.
    pub k: usize,
    /// Stop after this many optimizer steps, mid-epoch if needed.
    pub max_steps: Option<usize>,
    /// Decoding used when the selection metric needs captions.
    pub beam: usize,
    pub max_new: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 16,
            epochs: 10,
            seed: 0,
            retrieval_enabled: true,
            blank_image: false,
            weight_decay: 0.01,
            selection_metric: SelectionMetric::Loss,
            k: DEFAULT_K,
            max_steps: None,
            beam: crate::caption::DEFAULT_BEAM,
            max_new: crate::caption::DEFAULT_MAX_NEW,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning_rate {} is invalid", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if self.retrieval_enabled && self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1 when retrieval is enabled".into()));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument(format!("weight_decay {} is invalid", self.weight_decay)));
        }
        Ok(())
    }
}

/// One training or validation item. `record_id` names the datastore entry
/// holding this very caption, which retrieval must skip.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub image: Vec<f64>,
    pub reference: String,
    pub record_id: Option<u64>,
}

/// A tokenized instance with its encoder states.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
    pub mask: Vec<bool>,
    pub enc: EncoderStates,
}

impl Prepared {
    pub fn scored(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

pub fn prepare(
    params: &ModelParams,
    tokenizer: &Tokenizer,
    store: Option<&Datastore>,
    examples: &[TrainExample],
    config: &TrainingConfig,
) -> Result<Vec<Prepared>> {
    examples
        .iter()
        .map(|ex| {
            let captions: Vec<String> = match (config.retrieval_enabled, store) {
                (true, Some(s)) => s
                    .retrieve(&ex.image, config.k + 1)?
                    .into_iter()
                    .filter(|(r, _)| Some(r.id) != ex.record_id)
                    .take(config.k)
                    .map(|(r, _)| r.text.clone())
                    .collect(),
                (true, None) => return Err(Error::InvalidArgument("retrieval needs a datastore".into())),
                (false, _) => Vec::new(),
            };
            let inst = make_training_instance(&captions, &ex.reference, tokenizer, params.config.max_context)?;
            let enc = if config.blank_image {
                params.encode_image(&ex.image)?;
                EncoderStates::blank(params)
            } else {
                params.encode_image(&ex.image)?
            };
            Ok(Prepared {
                inputs: inst.inputs(),
                targets: inst.targets(),
                mask: inst.loss_mask,
                enc,
            })
        })
        .collect()
}

/// Mean loss per scored token.
pub fn mean_loss(params: &ModelParams, data: &[Prepared]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for p in data {
        total += params.loss(&p.enc, &p.inputs, &p.targets, &p.mask)?;
        count += p.scored();
    }
    if count == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(total / count as f64)
}

/// Per-token loss and θ gradient over a batch.
pub fn batch_grad(params: &ModelParams, batch: &[&Prepared]) -> Result<(f64, Theta)> {
    let mut grad = params.theta.zeros_like();
    let mut loss = 0.0;
    let mut count = 0;
    for p in batch {
        let (l, g) = params.loss_and_grad(&p.enc, &p.inputs, &p.targets, &p.mask, GradMode::CrossAttention)?;
        loss += l;
        count += p.scored();
        grad.add_scaled(&g.theta, 1.0);
    }
    let scale = 1.0 / count as f64;
    let mut out = grad.zeros_like();
    out.add_scaled(&grad, scale);
    Ok((loss * scale, out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: Option<f64>,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("record serializes") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let epochs = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::format("training log", e.to_string())))
            .collect::<Result<_>>()?;
        Ok(Self { epochs })
    }
}

pub struct TrainInputs<'a> {
    pub params: &'a ModelParams,
    pub tokenizer: &'a Tokenizer,
    pub store: Option<&'a Datastore>,
    pub train: &'a [TrainExample],
    pub val: &'a [TrainExample],
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters carrying the selected epoch's θ.
    pub params: ModelParams,
    pub log: TrainingLog,
    pub best_epoch: usize,
    pub steps: usize,
}

fn validation_metric(
    params: &ModelParams,
    inputs: &TrainInputs,
    config: &TrainingConfig,
) -> Result<f64> {
    let settings = CaptionSettings {
        k: config.k,
        beam: config.beam,
        max_new: config.max_new,
        retrieval: config.retrieval_enabled,
        blank_image: config.blank_image,
    };
    let captioner = Captioner::new(params, inputs.tokenizer, inputs.store, settings)?;
    let examples: Vec<EvalExample> = inputs
        .val
        .iter()
        .map(|e| EvalExample {
            image: e.image.clone(),
            references: vec![e.reference.clone()],
        })
        .collect();
    Ok(evaluate(&captioner, &examples)?.0.cider)
}

/// Trains θ and returns the epoch selected by `config.selection_metric`
/// (earliest on ties). Writes `epoch-<n>.ckpt` per epoch into `checkpoints`
/// when given.
pub fn train(inputs: &TrainInputs, config: &TrainingConfig, checkpoints: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    if inputs.train.is_empty() || inputs.val.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let train_set = prepare(inputs.params, inputs.tokenizer, inputs.store, inputs.train, config)?;
    let val_set = prepare(inputs.params, inputs.tokenizer, inputs.store, inputs.val, config)?;
    let frozen = inputs.params.frozen_digest();

    let mut params = inputs.params.clone();
    let mut opt = AdamW::new(config.learning_rate, config.weight_decay);
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, usize, Theta)> = None;
    let mut steps = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    'epochs: for epoch in 1..=config.epochs {
        let mut shuffle = rng::derive(config.seed, epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        let mut stop = false;
        for chunk in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| steps >= m) {
                stop = true;
                break;
            }
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grad) = batch_grad(&params, &batch)?;
            if !loss.is_finite() || !grad.max_abs().is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss {loss} at epoch {epoch}, step {}",
                    steps + 1
                )));
            }
            opt.update_theta(&mut params.theta, &grad);
            loss_sum += loss;
            batches += 1;
            steps += 1;
        }
        if batches == 0 {
            break;
        }
        let val_loss = mean_loss(&params, &val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite validation loss at epoch {epoch}")));
        }
        let val_metric = match config.selection_metric {
            SelectionMetric::Cider => Some(validation_metric(&params, inputs, config)?),
            SelectionMetric::Loss => None,
        };
        let checkpoint = match checkpoints {
            Some(dir) => {
                let path: PathBuf = dir.join(format!("epoch-{epoch}.ckpt"));
                save_checkpoint(&path, &params, Some(inputs.tokenizer))?;
                Some(path.display().to_string())
            }
            None => None,
        };
        log.epochs.push(EpochRecord {
            epoch,
            steps,
            train_loss: loss_sum / batches as f64,
            val_loss,
            val_metric,
            checkpoint,
        });
        let key = match config.selection_metric {
            SelectionMetric::Loss => -val_loss,
            SelectionMetric::Cider => val_metric.unwrap_or(f64::NEG_INFINITY),
        };
        if best.as_ref().is_none_or(|(b, _, _)| key > *b) {
            best = Some((key, epoch, params.theta.clone()));
        }
        if stop || config.max_steps.is_some_and(|m| steps >= m) {
            break 'epochs;
        }
    }

    if params.frozen_digest() != frozen {
        return Err(Error::Numeric("frozen weights changed during training".into()));
    }
    let (best_epoch, theta) = match best {
        Some((_, e, t)) => (e, t),
        None => (0, params.theta.clone()),
    };
    params.theta = theta;
    Ok(TrainOutcome {
        params,
        log,
        best_epoch,
        steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-3,
            batch_size: 16,
            epochs: 3,
            seed: 0,
        }
    }
}

/// A text document in prompt form: demonstration captions then a caption.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainDoc {
    pub captions: Vec<String>,
    pub caption: String,
}

/// Language-model pretraining of the decoder on prompt-formatted text, with
/// the image path silenced. Every next-token position is scored. Updates
/// the embeddings, decoder blocks and final norm; leaves the encoder stub
/// and θ untouched. Returns the mean per-token loss of each epoch.
pub fn pretrain_decoder(
    params: &mut ModelParams,
    tokenizer: &Tokenizer,
    docs: &[PretrainDoc],
    config: &PretrainConfig,
) -> Result<Vec<f64>> {
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    let blank = EncoderStates::blank(params);
    let data: Vec<(Vec<u32>, Vec<u32>)> = docs
        .iter()
        .map(|d| {
            let inst = make_training_instance(&d.captions, &d.caption, tokenizer, params.config.max_context)?;
            Ok((inst.inputs(), inst.targets()))
        })
        .collect::<Result<_>>()?;
    let mut opt = AdamW::new(config.learning_rate, 0.0);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::derive(config.seed, 1_000_000 + epoch as u64));
        let mut total = 0.0;
        let mut tokens = 0;
        for chunk in order.chunks(config.batch_size) {
            let mut grad = params.backbone.zeros_like();
            let mut count = 0;
            for &i in chunk {
                let (inputs, targets) = &data[i];
                let mask = vec![true; targets.len()];
                let (l, g) = params.loss_and_grad(&blank, inputs, targets, &mask, GradMode::Full)?;
                let gb = g.backbone.expect("full gradients requested");
                for (a, b) in grad.tensors_mut().into_iter().zip(gb.tensors()) {
                    a.iter_mut().zip(b.2).for_each(|(x, y)| *x += y);
                }
                total += l;
                count += targets.len();
            }
            tokens += count;
            if !total.is_finite() {
                return Err(Error::Numeric(format!("non-finite pretraining loss in epoch {}", epoch + 1)));
            }
            let scale = 1.0 / count as f64;
            let grads: Vec<Vec<f64>> = grad
                .tensors()
                .into_iter()
                .skip(1)
                .map(|(_, _, t)| t.iter().map(|x| x * scale).collect())
                .collect();
            let ps: Vec<&mut [f64]> = params.backbone.tensors_mut().into_iter().skip(1).collect();
            opt.update(ps, grads.iter().map(|g| g.as_slice()).collect());
        }
        history.push(total / tokens as f64);
    }
    Ok(history)
}

/// Pretraining documents from plain captions: each document ends with one
/// caption, preceded by `0..=max_k` of its nearest captions in embedding
/// space (most similar first).
pub fn pretrain_docs_from_captions(
    captions: &[RawCaption],
    n_docs: usize,
    max_k: usize,
    seed: u64,
) -> Result<Vec<PretrainDoc>> {
    let first = captions.first().ok_or(Error::EmptyCorpus)?;
    let dim = first.embedding.len();
    let index = FlatIndex::build(
        dim,
        captions.iter().enumerate().map(|(i, c)| (i as u64, c.embedding.as_slice())),
    )?;
    let mut rng = rng::derive(seed, 5);
    let mut docs = Vec::with_capacity(n_docs);
    for _ in 0..n_docs {
        let i = rng.random_range(0..captions.len());
        let k = rng.random_range(0..=max_k);
        let demos = if k == 0 {
            Vec::new()
        } else {
            index
                .search(&captions[i].embedding, k + 1)?
                .into_iter()
                .filter(|h| h.id != i as u64)
                .take(k)
                .map(|h| captions[h.id as usize].text.clone())
                .collect()
        };
        docs.push(PretrainDoc {
            captions: demos,
            caption: captions[i].text.clone(),
        });
    }
    Ok(docs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub d: usize,
    pub trainable_params: u64,
    pub val_loss_retrieval: f64,
    pub val_loss_no_retrieval: f64,
    pub cider_retrieval: Option<f64>,
    pub cider_no_retrieval: Option<f64>,
}

/// For each `d`, trains a retrieval-prompted and a "This image shows" model
/// from the same θ seed and budget over the shared decoder, and reports the
/// selected epoch of each.
pub fn ablation_compare(inputs: &TrainInputs, grid: &[usize], config: &TrainingConfig) -> Result<Vec<AblationRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty d grid".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &d in grid {
        let params = inputs.params.with_cross_dim(d, inputs.params.seeds.theta)?;
        let run = |retrieval: bool| -> Result<TrainOutcome> {
            let cfg = TrainingConfig {
                retrieval_enabled: retrieval,
                ..config.clone()
            };
            let sub = TrainInputs {
                params: &params,
                tokenizer: inputs.tokenizer,
                store: inputs.store,
                train: inputs.train,
                val: inputs.val,
            };
            train(&sub, &cfg, None)
        };
        let with = run(true)?;
        let without = run(false)?;
        let pick = |o: &TrainOutcome| o.log.epochs.iter().find(|e| e.epoch == o.best_epoch).cloned();
        let (w, wo) = (pick(&with), pick(&without));
        rows.push(AblationRow {
            d,
            trainable_params: params.config.trainable_params(),
            val_loss_retrieval: w.as_ref().map_or(f64::NAN, |e| e.val_loss),
            val_loss_no_retrieval: wo.as_ref().map_or(f64::NAN, |e| e.val_loss),
            cider_retrieval: w.and_then(|e| e.val_metric),
            cider_no_retrieval: wo.and_then(|e| e.val_metric),
        });
    }
    Ok(rows)
}
