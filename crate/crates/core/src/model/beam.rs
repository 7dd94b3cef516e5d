//! Beam-search and greedy decoding.

use std::cmp::Ordering;

use super::forward::EncoderStates;
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::tokenizer::{BOS, EOS, PAD, UNK};

/// Ids never generated.
const BANNED: [u32; 3] = [PAD, BOS, UNK];

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens, without the end token.
    pub tokens: Vec<u32>,
    /// Summed natural-log probability, including the end token when emitted.
    pub score: f64,
    pub ended: bool,
}

fn by_score_then_tokens(a: &(f64, Vec<u32>), b: &(f64, Vec<u32>)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1))
}

/// Log-probabilities of the next token after `[BOS] ++ prefix`.
pub fn next_log_probs(params: &ModelParams, enc: &EncoderStates, prefix: &[u32]) -> Result<Vec<f64>> {
    let mut inputs = Vec::with_capacity(prefix.len() + 1);
    inputs.push(BOS);
    inputs.extend_from_slice(prefix);
    let logits = params.decoder_forward(&inputs, enc)?;
    let row = logits.row(logits.nrows() - 1);
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(row.iter().map(|v| v - lse).collect())
}

/// Beam search over summed log-probabilities, continuing `prompt`.
///
/// At each step the `beam` best extensions are kept; those ending in the end
/// token retire as finished. A hypothesis also finishes after `max_new`
/// tokens or when the context is full. Ties go to the lexicographically
/// smallest sequence.
pub fn beam_search(
    params: &ModelParams,
    enc: &EncoderStates,
    prompt: &[u32],
    beam: usize,
    max_new: usize,
) -> Result<Hypothesis> {
    if beam < 1 {
        return Err(Error::InvalidArgument("beam size must be at least 1".into()));
    }
    let room = params.config.max_context.saturating_sub(prompt.len() + 1);
    if prompt.len() + 1 > params.config.max_context {
        return Err(Error::ContextOverflow {
            len: prompt.len() + 1,
            max: params.config.max_context,
        });
    }
    let max_new = max_new.min(room + 1);
    let mut live: Vec<(f64, Vec<u32>)> = vec![(0.0, Vec::new())];
    let mut finished: Vec<(f64, Vec<u32>)> = Vec::new();
    let mut prefix = prompt.to_vec();

    for step in 0..max_new {
        let mut candidates = Vec::new();
        for (score, toks) in &live {
            prefix.truncate(prompt.len());
            prefix.extend_from_slice(toks);
            let lp = next_log_probs(params, enc, &prefix)?;
            for (id, &l) in lp.iter().enumerate() {
                let id = id as u32;
                if BANNED.contains(&id) {
                    continue;
                }
                let mut t = toks.clone();
                t.push(id);
                candidates.push((score + l, t));
            }
        }
        candidates.sort_by(by_score_then_tokens);
        candidates.truncate(beam);
        let last = step + 1 == max_new;
        live.clear();
        for c in candidates {
            if c.1.last() == Some(&EOS) || last {
                finished.push(c);
            } else {
                live.push(c);
            }
        }
        if live.is_empty() {
            break;
        }
        let best_finished = finished.iter().map(|f| f.0).fold(f64::NEG_INFINITY, f64::max);
        if best_finished >= live[0].0 {
            break;
        }
    }
    finished.extend(live);
    finished.sort_by(by_score_then_tokens);
    let (score, mut tokens) = finished.into_iter().next().unwrap_or((0.0, Vec::new()));
    let ended = tokens.last() == Some(&EOS);
    if ended {
        tokens.pop();
    }
    Ok(Hypothesis { tokens, score, ended })
}

/// Picks the most likely token at every step (lowest id on ties).
pub fn greedy_decode(params: &ModelParams, enc: &EncoderStates, prompt: &[u32], max_new: usize) -> Result<Hypothesis> {
    let mut prefix = prompt.to_vec();
    let mut score = 0.0;
    let limit = params.config.max_context.saturating_sub(prompt.len() + 1) + 1;
    for _ in 0..max_new.min(limit) {
        let lp = next_log_probs(params, enc, &prefix)?;
        let (best, l) = lp
            .iter()
            .enumerate()
            .filter(|(i, _)| !BANNED.contains(&(*i as u32)))
            .fold((0usize, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        score += l;
        if best as u32 == EOS {
            return Ok(Hypothesis {
                tokens: prefix[prompt.len()..].to_vec(),
                score,
                ended: true,
            });
        }
        prefix.push(best as u32);
    }
    Ok(Hypothesis {
        tokens: prefix[prompt.len()..].to_vec(),
        score,
        ended: false,
    })
}
