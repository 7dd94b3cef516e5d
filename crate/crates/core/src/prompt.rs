//! The fixed task-demonstration prompt and training instances built on it.

use crate::error::{Error, Result};
use crate::tokenizer::{Tokenizer, BOS, EOS};

pub const RETRIEVAL_HEADER: &str = "Similar images show";
pub const CLOSING: &str = "This image shows";
const SEPARATOR: &str = "\n\n";

/// Renders retrieved captions into the demonstration template:
///
/// ```text
/// Similar images show\n\n<c1>\n\n...\n\n<cn>.\n\nThis image shows
/// ```
///
/// Caption bytes are copied verbatim; the period follows the last caption
/// even when it already ends in punctuation. An empty list renders the
/// no-retrieval prompt.
pub fn build_prompt<S: AsRef<str>>(captions: &[S]) -> String {
    if captions.is_empty() {
        return build_no_retrieval_prompt();
    }
    let mut out = String::from(RETRIEVAL_HEADER);
    for c in captions {
        out.push_str(SEPARATOR);
        out.push_str(c.as_ref());
    }
    out.push('.');
    out.push_str(SEPARATOR);
    out.push_str(CLOSING);
    out
}

pub fn build_no_retrieval_prompt() -> String {
    CLOSING.to_owned()
}

/// A rendered prompt plus reference, aligned for next-token training.
///
/// The decoder reads `inputs()` = `[BOS] ++ prompt ++ reference` and is
/// scored against `targets()` = `prompt ++ reference ++ [EOS]`; `loss_mask`
/// is indexed by target position.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptInstance {
    pub text: String,
    pub prompt_tokens: Vec<u32>,
    pub reference_tokens: Vec<u32>,
    pub loss_mask: Vec<bool>,
    /// Retrieved captions that survived the context budget.
    pub captions_used: usize,
}

impl PromptInstance {
    pub fn len(&self) -> usize {
        self.loss_mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loss_mask.is_empty()
    }

    pub fn inputs(&self) -> Vec<u32> {
        let mut v = Vec::with_capacity(self.len());
        v.push(BOS);
        v.extend_from_slice(&self.prompt_tokens);
        v.extend_from_slice(&self.reference_tokens);
        v
    }

    pub fn targets(&self) -> Vec<u32> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.prompt_tokens);
        v.extend_from_slice(&self.reference_tokens);
        v.push(EOS);
        v
    }

    /// Number of scored positions: reference tokens plus the end token.
    pub fn scored(&self) -> usize {
        self.reference_tokens.len() + 1
    }
}

/// Renders the longest prefix of `captions` whose prompt fits in `budget`
/// tokens, dropping captions from the last slot backward. Returns the text,
/// its tokens and the number of captions kept.
pub fn fit_prompt<S: AsRef<str>>(
    captions: &[S],
    tokenizer: &Tokenizer,
    budget: usize,
) -> Result<(String, Vec<u32>, usize)> {
    for n in (0..=captions.len()).rev() {
        let text = build_prompt(&captions[..n]);
        let tokens = tokenizer.encode(&text);
        if tokens.len() <= budget {
            return Ok((text, tokens, n));
        }
    }
    let min = tokenizer.count(CLOSING);
    Err(Error::ContextOverflow { len: min, max: budget })
}

/// Builds a training instance from retrieved `captions` (empty for the
/// no-retrieval regime) and a reference caption. Prompt tokens are masked
/// out of the loss; the reference and the end token are scored. When the
/// sequence would exceed `max_context`, whole captions are dropped from the
/// last slot backward; the reference is never truncated.
pub fn make_training_instance<S: AsRef<str>>(
    captions: &[S],
    reference: &str,
    tokenizer: &Tokenizer,
    max_context: usize,
) -> Result<PromptInstance> {
    let reference_tokens = tokenizer.encode(reference);
    if reference_tokens.is_empty() {
        return Err(Error::EmptyReference);
    }
    let needed = reference_tokens.len() + 1;
    if needed > max_context {
        return Err(Error::ContextOverflow {
            len: needed,
            max: max_context,
        });
    }
    let (text, prompt_tokens, captions_used) = fit_prompt(captions, tokenizer, max_context - needed)
        .map_err(|_| Error::ContextOverflow {
            len: needed + tokenizer.count(CLOSING),
            max: max_context,
        })?;
    let mut loss_mask = vec![false; prompt_tokens.len()];
    loss_mask.resize(prompt_tokens.len() + needed, true);
    Ok(PromptInstance {
        text,
        prompt_tokens,
        reference_tokens,
        loss_mask,
        captions_used,
    })
}
