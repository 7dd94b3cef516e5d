//! Retrieve, prompt, decode.

use serde::{Deserialize, Serialize};

use crate::datastore::{Datastore, RetrievalLog, DEFAULT_K};
use crate::error::{Error, Result};
use crate::model::{beam_search, EncoderStates, ModelParams};
use crate::prompt::{build_no_retrieval_prompt, fit_prompt};
use crate::tokenizer::Tokenizer;

pub const DEFAULT_BEAM: usize = 3;
pub const DEFAULT_MAX_NEW: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionSettings {
    /// Captions retrieved per image; ignored without retrieval.
    pub k: usize,
    pub beam: usize,
    pub max_new: usize,
    pub retrieval: bool,
    /// Feed a zeroed image to the decoder.
    #[serde(default)]
    pub blank_image: bool,
}

impl Default for CaptionSettings {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            beam: DEFAULT_BEAM,
            max_new: DEFAULT_MAX_NEW,
            retrieval: true,
            blank_image: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Captioned {
    pub text: String,
    pub tokens: Vec<u32>,
    pub prompt: String,
    /// `(record id, source, score)` of the captions placed in the prompt.
    pub retrieved: Vec<(u64, String, f64)>,
}

pub struct Captioner<'a> {
    pub params: &'a ModelParams,
    pub tokenizer: &'a Tokenizer,
    pub store: Option<&'a Datastore>,
    pub settings: CaptionSettings,
}

impl<'a> Captioner<'a> {
    pub fn new(
        params: &'a ModelParams,
        tokenizer: &'a Tokenizer,
        store: Option<&'a Datastore>,
        settings: CaptionSettings,
    ) -> Result<Self> {
        if settings.retrieval && settings.k == 0 {
            return Err(Error::InvalidArgument(
                "k must be at least 1; disable retrieval for the prompt without captions".into(),
            ));
        }
        if settings.retrieval && store.is_none() {
            return Err(Error::InvalidArgument("retrieval needs a datastore".into()));
        }
        if tokenizer.len() != params.config.vocab_size {
            return Err(Error::InvalidArgument(format!(
                "tokenizer has {} entries, model vocabulary is {}",
                tokenizer.len(),
                params.config.vocab_size
            )));
        }
        if let Some(s) = store {
            if settings.retrieval && s.dim() != params.config.image_dim {
                return Err(Error::DimensionMismatch {
                    expected: params.config.image_dim,
                    found: s.dim(),
                });
            }
        }
        Ok(Self {
            params,
            tokenizer,
            store,
            settings,
        })
    }

    pub fn encode(&self, image: &[f64]) -> Result<EncoderStates> {
        let enc = self.params.encode_image(image)?;
        Ok(if self.settings.blank_image {
            EncoderStates::blank(self.params)
        } else {
            enc
        })
    }

    pub fn caption(&self, image: &[f64]) -> Result<Captioned> {
        self.caption_logged(0, image, None)
    }

    /// Captions one image, appending the retrieval to `log` when given.
    pub fn caption_logged(&self, query_id: u64, image: &[f64], log: Option<&mut RetrievalLog>) -> Result<Captioned> {
        let enc = self.encode(image)?;
        let budget = self
            .params
            .config
            .max_context
            .saturating_sub(1 + self.settings.max_new.max(1));
        let (prompt, prompt_tokens, retrieved) = match (self.settings.retrieval, self.store) {
            (true, Some(store)) => {
                let hits = store.retrieve(image, self.settings.k)?;
                let texts: Vec<&str> = hits.iter().map(|(r, _)| r.text.as_str()).collect();
                let (prompt, tokens, used) = fit_prompt(&texts, self.tokenizer, budget)?;
                let kept = &hits[..used];
                if let Some(log) = log {
                    log.record(query_id, kept);
                }
                let retrieved = kept.iter().map(|(r, s)| (r.id, r.source.clone(), *s)).collect();
                (prompt, tokens, retrieved)
            }
            _ => {
                let prompt = build_no_retrieval_prompt();
                let tokens = self.tokenizer.encode(&prompt);
                (prompt, tokens, Vec::new())
            }
        };
        let hyp = beam_search(self.params, &enc, &prompt_tokens, self.settings.beam, self.settings.max_new)?;
        Ok(Captioned {
            text: self.tokenizer.decode(&hyp.tokens),
            tokens: hyp.tokens,
            prompt,
            retrieved,
        })
    }
}
