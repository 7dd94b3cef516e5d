//! Whitespace-and-punctuation tokenizer over a corpus-built vocabulary.
//!
//! Words are maximal runs of non-space, non-punctuation characters. Each
//! punctuation character and each newline is its own token. Decoding joins
//! tokens with single spaces, except that no space precedes punctuation or
//! a newline and none follows a newline. Text already in that canonical
//! form (single spaces, punctuation attached to the preceding word, every
//! piece in the vocabulary) round-trips exactly.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};
use crate::prompt;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() && !matches!(c, '_' | '-' | '\'')
}

/// Splits text into token pieces.
pub fn split(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        let boundary = c.is_whitespace() || is_punct(c);
        if boundary {
            if let Some(s) = start.take() {
                out.push(&text[s..i]);
            }
            if c == '\n' || is_punct(c) {
                out.push(&text[i..i + c.len_utf8()]);
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}

/// Lowercased pieces, as used by the caption metrics.
pub fn eval_tokens(text: &str) -> Vec<String> {
    split(&text.to_lowercase())
        .into_iter()
        .filter(|p| *p != "\n")
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    lookup: HashMap<String, u32>,
}

impl Tokenizer {
    /// Vocabulary of the reserved tokens, the prompt template pieces and every
    /// piece of `texts`, in sorted order after the reserved ids.
    pub fn from_corpus<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut pieces = BTreeSet::new();
        let template = [prompt::RETRIEVAL_HEADER, prompt::CLOSING, ".\n"];
        for text in template.into_iter().chain(texts) {
            for p in split(text) {
                pieces.insert(p.to_owned());
            }
        }
        Self::from_tokens(pieces).expect("corpus pieces never collide with reserved tokens")
    }

    fn from_tokens(pieces: impl IntoIterator<Item = String>) -> Result<Self> {
        let tokens: Vec<String> = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(pieces)
            .collect();
        let mut lookup = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if lookup.insert(t.clone(), i as u32).is_some() {
                return Err(Error::format("vocabulary", format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, lookup })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.lookup.get(piece).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        split(text)
            .into_iter()
            .map(|p| self.id(p).unwrap_or(UNK))
            .collect()
    }

    pub fn count(&self, text: &str) -> usize {
        split(text).len()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        let mut after_newline = true;
        for &id in ids {
            if matches!(id, PAD | BOS | EOS) {
                continue;
            }
            let piece = self.token(id).unwrap_or(SPECIALS[UNK as usize]);
            let attach = piece == "\n" || piece.chars().all(is_punct);
            if !after_newline && !attach && !out.is_empty() {
                out.push(' ');
            }
            out.push_str(piece);
            after_newline = piece == "\n";
        }
        out
    }

    /// One token per line; `\` and newline are escaped as `\\` and `\n`.
    pub fn to_vocab_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens[SPECIALS.len()..] {
            out.push_str(&t.replace('\\', "\\\\").replace('\n', "\\n"));
            out.push('\n');
        }
        out
    }

    pub fn from_vocab_text(text: &str) -> Result<Self> {
        let mut pieces = Vec::new();
        for line in text.lines() {
            let mut piece = String::new();
            let mut chars = line.chars();
            while let Some(c) = chars.next() {
                if c == '\\' {
                    match chars.next() {
                        Some('n') => piece.push('\n'),
                        Some('\\') => piece.push('\\'),
                        other => {
                            return Err(Error::format("vocabulary", format!("bad escape {other:?}")))
                        }
                    }
                } else {
                    piece.push(c);
                }
            }
            pieces.push(piece);
        }
        Self::from_tokens(pieces)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_vocab_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_vocab_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_words_punctuation_and_newlines() {
        assert_eq!(split("a dog, runs."), vec!["a", "dog", ",", "runs", "."]);
        assert_eq!(split("show\n\nit"), vec!["show", "\n", "\n", "it"]);
        assert_eq!(split("  x\t y "), vec!["x", "y"]);
        assert_eq!(split("dog's well-fed"), vec!["dog's", "well-fed"]);
    }

    #[test]
    fn template_round_trips() {
        let tok = Tokenizer::from_corpus(["a dog runs", "the cat"]);
        let p = prompt::build_prompt(&["a dog runs", "the cat"]);
        assert_eq!(tok.decode(&tok.encode(&p)), p);
        assert!(!tok.encode(&p).contains(&UNK));
    }

    #[test]
    fn unknown_pieces_map_to_unk() {
        let tok = Tokenizer::from_corpus(["a b"]);
        assert_eq!(tok.encode("a zebra"), vec![tok.id("a").unwrap(), UNK]);
    }

    #[test]
    fn vocab_file_round_trips() {
        let tok = Tokenizer::from_corpus(["back\\slash x", "y."]);
        let again = Tokenizer::from_vocab_text(&tok.to_vocab_text()).unwrap();
        assert_eq!(tok, again);
    }

    #[test]
    fn eval_tokens_lowercase() {
        assert_eq!(eval_tokens("A Dog."), vec!["a", "dog", "."]);
    }
}
