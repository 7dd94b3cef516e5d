//! Topic-structured synthetic captioning corpora.
//!
//! Every caption follows `a {attribute} {object} {action} {relation} the {place}`.
//! Object, action and place words belong to the caption's topic; attribute
//! and relation words are function words shared by all domains. Topic words
//! are drawn with Zipf weights, so each topic has a most likely caption.
//!
//! Topic `t` owns the unit anchor `e_{t + anchor_offset}`. Images and caption
//! embeddings are independent noisy copies of the anchor, normalized and
//! rounded to `f32` precision so they survive binary round trips exactly.
//! With `attribute_strength > 0` the image also carries the caption's
//! attribute along a basis vector counted from the end of the space.

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::caption::{CaptionSettings, Captioner};
use crate::datastore::{Datastore, RawCaption};
use crate::model::ModelParams;
use crate::tokenizer::{eval_tokens, Tokenizer};
use crate::training::PretrainDoc;
use crate::vector_index::to_stored;

pub const ATTRIBUTES: [&str; 4] = ["red", "blue", "green", "white"];
pub const RELATIONS: [&str; 4] = ["on", "near", "in", "by"];
pub const FUNCTION_WORDS: [&str; 2] = ["a", "the"];
const SLOTS: [&str; 3] = ["n", "v", "p"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    /// Source tag; also prefixes every topic word.
    pub name: String,
    pub n_topics: usize,
    pub embedding_dim: usize,
    pub noise_std: f64,
    pub n_examples: usize,
    pub seed: u64,
    /// Candidate words per topic slot.
    #[serde(default = "default_words_per_slot")]
    pub words_per_slot: usize,
    /// Word `j` of a slot has weight `(j + 1)^-zipf_exponent`.
    #[serde(default = "default_zipf")]
    pub zipf_exponent: f64,
    /// Index of the first topic anchor; domains with equal offsets share anchors.
    #[serde(default)]
    pub anchor_offset: usize,
    #[serde(default)]
    pub attribute_strength: f64,
}

fn default_words_per_slot() -> usize {
    3
}

fn default_zipf() -> f64 {
    1.5
}

impl DomainSpec {
    pub fn new(name: &str, n_topics: usize, embedding_dim: usize, noise_std: f64, n_examples: usize, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            n_topics,
            embedding_dim,
            noise_std,
            n_examples,
            seed,
            words_per_slot: default_words_per_slot(),
            zipf_exponent: default_zipf(),
            anchor_offset: 0,
            attribute_strength: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.name.is_empty() || self.name.chars().any(|c| !(c.is_ascii_alphanumeric() || c == '_')) {
            return bad(format!("domain name {:?} must be non-empty ASCII letters, digits or '_'", self.name));
        }
        if self.n_topics == 0 || self.words_per_slot == 0 {
            return bad("n_topics and words_per_slot must be positive".into());
        }
        let mut needed = self.anchor_offset + self.n_topics;
        if self.attribute_strength != 0.0 {
            needed += ATTRIBUTES.len();
        }
        if self.embedding_dim < needed {
            return bad(format!(
                "embedding_dim {} cannot hold {needed} orthogonal anchors",
                self.embedding_dim
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std {} must be finite and non-negative", self.noise_std));
        }
        if !self.zipf_exponent.is_finite() || !self.attribute_strength.is_finite() {
            return bad("zipf_exponent and attribute_strength must be finite".into());
        }
        Ok(())
    }

    /// Word `j` of slot `slot` for topic `t`.
    pub fn word(&self, topic: usize, slot: usize, j: usize) -> String {
        format!("{}_{}{}_{}", self.name, SLOTS[slot], topic, j)
    }

    /// Every word owned by `topic`.
    pub fn topic_vocab(&self, topic: usize) -> Vec<String> {
        (0..SLOTS.len())
            .flat_map(|s| (0..self.words_per_slot).map(move |j| (s, j)))
            .map(|(s, j)| self.word(topic, s, j))
            .collect()
    }

    /// Union of all topic vocabularies of the domain.
    pub fn vocab(&self) -> BTreeSet<String> {
        (0..self.n_topics).flat_map(|t| self.topic_vocab(t)).collect()
    }

    pub fn anchor(&self, topic: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.embedding_dim];
        v[self.anchor_offset + topic] = 1.0;
        v
    }

    fn attribute_axis(&self, attribute: usize) -> usize {
        self.embedding_dim - 1 - attribute
    }
}

/// Every word any domain may use outside its topic vocabularies.
pub fn function_words() -> BTreeSet<&'static str> {
    FUNCTION_WORDS.iter().chain(&ATTRIBUTES).chain(&RELATIONS).copied().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthExample {
    pub image: Vec<f64>,
    pub caption: String,
    pub topic: usize,
    pub attribute: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub examples: Vec<SynthExample>,
    /// Datastore captions, one per example in the same order, tagged with the domain name.
    pub captions: Vec<RawCaption>,
}

/// Samples one caption for `topic`; returns it with its attribute index.
pub fn sample_caption(spec: &DomainSpec, topic: usize, rng: &mut Rng) -> (String, usize) {
    let weights: Vec<f64> = (0..spec.words_per_slot)
        .map(|j| ((j + 1) as f64).powf(-spec.zipf_exponent))
        .collect();
    let slot = WeightedIndex::new(&weights).expect("positive weights");
    let attribute = rng.random_range(0..ATTRIBUTES.len());
    let noun = spec.word(topic, 0, slot.sample(rng));
    let verb = spec.word(topic, 1, slot.sample(rng));
    let relation = RELATIONS[rng.random_range(0..RELATIONS.len())];
    let place = spec.word(topic, 2, slot.sample(rng));
    (
        format!("a {} {noun} {verb} {relation} the {place}", ATTRIBUTES[attribute]),
        attribute,
    )
}

fn noisy(spec: &DomainSpec, topic: usize, attribute: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    let mut v = spec.anchor(topic);
    if spec.attribute_strength != 0.0 {
        v[spec.attribute_axis(attribute)] += spec.attribute_strength;
    }
    if spec.noise_std > 0.0 {
        for x in &mut v {
            *x += spec.noise_std * rng::normal(rng);
        }
    }
    Ok(to_stored(&v)?.into_iter().map(f64::from).collect())
}

/// Generates `n_examples` image/caption pairs, topics assigned round robin.
pub fn generate(spec: &DomainSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut text_rng = rng::derive(spec.seed, 1);
    let mut image_rng = rng::derive(spec.seed, 2);
    let mut caption_rng = rng::derive(spec.seed, 3);
    let mut examples = Vec::with_capacity(spec.n_examples);
    let mut captions = Vec::with_capacity(spec.n_examples);
    for i in 0..spec.n_examples {
        let topic = i % spec.n_topics;
        let (caption, attribute) = sample_caption(spec, topic, &mut text_rng);
        let image = noisy(spec, topic, attribute, &mut image_rng)?;
        let embedding = noisy(spec, topic, attribute, &mut caption_rng)?;
        captions.push(RawCaption {
            text: caption.clone(),
            source: spec.name.clone(),
            embedding,
        });
        examples.push(SynthExample {
            image,
            caption,
            topic,
            attribute,
        });
    }
    Ok(SynthCorpus { examples, captions })
}

/// Prompt-formatted text for decoder pretraining: each document holds
/// `0..=max_k` demonstration captions and a final caption, all from one
/// topic of one domain, except that each demonstration is replaced by a
/// caption of another topic with probability `off_topic`.
pub fn demonstration_docs(
    specs: &[DomainSpec],
    n_docs: usize,
    max_k: usize,
    off_topic: f64,
    seed: u64,
) -> Result<Vec<PretrainDoc>> {
    if specs.is_empty() {
        return Err(Error::InvalidArgument("no domains to draw from".into()));
    }
    for s in specs {
        s.validate()?;
    }
    let mut rng = rng::derive(seed, 4);
    let mut docs = Vec::with_capacity(n_docs);
    for _ in 0..n_docs {
        let spec = &specs[rng.random_range(0..specs.len())];
        let topic = rng.random_range(0..spec.n_topics);
        let k = rng.random_range(0..=max_k);
        let captions = (0..k)
            .map(|_| {
                let t = if spec.n_topics > 1 && rng.random_bool(off_topic) {
                    (topic + rng.random_range(1..spec.n_topics)) % spec.n_topics
                } else {
                    topic
                };
                sample_caption(spec, t, &mut rng).0
            })
            .collect();
        let caption = sample_caption(spec, topic, &mut rng).0;
        docs.push(PretrainDoc { captions, caption });
    }
    Ok(docs)
}

/// Share of `tokens` that belong to `vocab`; zero for an empty sequence.
pub fn vocab_fraction<S: AsRef<str>>(tokens: &[S], vocab: &BTreeSet<String>) -> f64 {
    if tokens.is_empty() {
        return 0.0;
    }
    tokens.iter().filter(|t| vocab.contains(t.as_ref())).count() as f64 / tokens.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub caption_with_a: String,
    pub caption_with_b: String,
    /// Share of generated tokens from the target domain's topic vocabulary.
    pub fraction_with_a: f64,
    pub fraction_with_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub rows: Vec<TransferRow>,
    /// Share of images whose target-vocabulary fraction rose after the swap.
    pub share_increased: f64,
    /// Images captioned with the source store that used a source-vocabulary word.
    pub with_a_source_words: usize,
}

/// Captions target-domain images with the source store and again with the
/// target store, both with the same model and settings.
#[allow(clippy::too_many_arguments)]
pub fn domain_transfer_experiment(
    params: &ModelParams,
    tokenizer: &Tokenizer,
    settings: &CaptionSettings,
    store_a: &Datastore,
    store_b: &Datastore,
    spec_a: &DomainSpec,
    spec_b: &DomainSpec,
    images_b: &[Vec<f64>],
) -> Result<TransferReport> {
    if images_b.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let with_a = Captioner::new(params, tokenizer, Some(store_a), settings.clone())?;
    let with_b = Captioner::new(params, tokenizer, Some(store_b), settings.clone())?;
    let (vocab_a, vocab_b) = (spec_a.vocab(), spec_b.vocab());
    let mut rows = Vec::with_capacity(images_b.len());
    let mut with_a_source_words = 0;
    for image in images_b {
        let a = with_a.caption(image)?.text;
        let b = with_b.caption(image)?.text;
        let (ta, tb) = (eval_tokens(&a), eval_tokens(&b));
        if ta.iter().any(|t| vocab_a.contains(t)) {
            with_a_source_words += 1;
        }
        rows.push(TransferRow {
            fraction_with_a: vocab_fraction(&ta, &vocab_b),
            fraction_with_b: vocab_fraction(&tb, &vocab_b),
            caption_with_a: a,
            caption_with_b: b,
        });
    }
    let increased = rows.iter().filter(|r| r.fraction_with_b > r.fraction_with_a).count();
    Ok(TransferReport {
        share_increased: increased as f64 / rows.len() as f64,
        rows,
        with_a_source_words,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector_index::FlatIndex;

    #[test]
    fn noise_free_images_are_anchors() {
        let spec = DomainSpec::new("coco", 5, 8, 0.0, 20, 3);
        let corpus = generate(&spec).unwrap();
        for ex in &corpus.examples {
            assert_eq!(ex.image, spec.anchor(ex.topic));
        }
    }

    #[test]
    fn generation_is_pure() {
        let mut spec = DomainSpec::new("coco", 4, 12, 0.3, 30, 9);
        spec.attribute_strength = 0.5;
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let mut other = spec.clone();
        other.seed = 10;
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn captions_use_own_topic_and_function_words() {
        let spec = DomainSpec::new("flickr", 3, 6, 0.2, 30, 1);
        let corpus = generate(&spec).unwrap();
        let fw = function_words();
        for ex in &corpus.examples {
            let own: BTreeSet<String> = spec.topic_vocab(ex.topic).into_iter().collect();
            for w in ex.caption.split(' ') {
                assert!(own.contains(w) || fw.contains(w), "{w} in {}", ex.caption);
            }
        }
    }

    #[test]
    fn topic_vocabularies_are_disjoint() {
        let a = DomainSpec::new("coco", 4, 8, 0.0, 1, 0);
        let b = DomainSpec::new("vizwiz", 4, 8, 0.0, 1, 0);
        for t in 0..4 {
            for u in 0..4 {
                let x: BTreeSet<_> = a.topic_vocab(t).into_iter().collect();
                let y: BTreeSet<_> = a.topic_vocab(u).into_iter().collect();
                assert_eq!(x.is_disjoint(&y), t != u);
            }
        }
        assert!(a.vocab().is_disjoint(&b.vocab()));
    }

    #[test]
    fn noise_free_retrieval_stays_in_topic() {
        let spec = DomainSpec::new("coco", 6, 6, 0.0, 60, 2);
        let corpus = generate(&spec).unwrap();
        let items: Vec<(u64, Vec<f64>)> = corpus
            .captions
            .iter()
            .enumerate()
            .map(|(i, c)| (i as u64, c.embedding.clone()))
            .collect();
        let index = FlatIndex::build(spec.embedding_dim, items.iter().map(|(i, v)| (*i, v.as_slice()))).unwrap();
        for ex in &corpus.examples {
            for hit in index.search(&ex.image, 4).unwrap() {
                assert_eq!(corpus.examples[hit.id as usize].topic, ex.topic);
            }
        }
    }

    #[test]
    fn within_topic_similarity_exceeds_cross_topic() {
        let spec = DomainSpec::new("coco", 3, 5, 0.0, 9, 4);
        let corpus = generate(&spec).unwrap();
        for ex in &corpus.examples {
            for (other, cap) in corpus.examples.iter().zip(&corpus.captions) {
                let s: f64 = ex.image.iter().zip(&cap.embedding).map(|(a, b)| a * b).sum();
                assert_eq!(s, if other.topic == ex.topic { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn too_small_embedding_is_rejected() {
        let spec = DomainSpec::new("coco", 9, 8, 0.1, 10, 0);
        assert!(matches!(generate(&spec), Err(Error::InvalidArgument(_))));
        let mut spec = DomainSpec::new("coco", 4, 8, 0.1, 10, 0);
        spec.attribute_strength = 0.5;
        spec.anchor_offset = 1;
        assert!(generate(&spec).is_err());
    }
}
