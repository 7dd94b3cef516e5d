//! Corpus BLEU-4 and CIDEr over pre-tokenized captions.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const MAX_N: usize = 4;

type Counts<'a> = HashMap<&'a [String], usize>;

fn ngrams(tokens: &[String], n: usize) -> Counts<'_> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

fn check_corpus(hyps: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Result<()> {
    if hyps.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if hyps.len() != refs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} hypotheses but {} reference sets",
            hyps.len(),
            refs.len()
        )));
    }
    if let Some(i) = refs.iter().position(|r| r.is_empty()) {
        return Err(Error::InvalidArgument(format!("example {i} has no reference")));
    }
    Ok(())
}

/// Clipped n-gram matches of `hyp` against `refs`, and the hypothesis n-gram total.
pub fn modified_precision(hyp: &[String], refs: &[Vec<String>], n: usize) -> (usize, usize) {
    let h = ngrams(hyp, n);
    let mut max_ref: Counts = HashMap::new();
    for r in refs {
        for (g, c) in ngrams(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let clipped = h.iter().map(|(g, c)| (*c).min(*max_ref.get(g).unwrap_or(&0))).sum();
    (clipped, hyp.len().saturating_sub(n - 1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; MAX_N],
    pub totals: [usize; MAX_N],
    pub hyp_len: usize,
    pub ref_len: usize,
    pub brevity_penalty: f64,
    pub score: f64,
}

impl BleuStats {
    pub fn precision(&self, n: usize) -> f64 {
        let t = self.totals[n - 1];
        if t == 0 {
            0.0
        } else {
            self.matches[n - 1] as f64 / t as f64
        }
    }
}

/// Corpus-level BLEU-4 with uniform weights and no smoothing. The effective
/// reference length per example is the reference length closest to the
/// hypothesis, shorter on ties.
pub fn bleu4_stats(hyps: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Result<BleuStats> {
    check_corpus(hyps, refs)?;
    let mut matches = [0; MAX_N];
    let mut totals = [0; MAX_N];
    let mut hyp_len = 0;
    let mut ref_len = 0;
    for (h, rs) in hyps.iter().zip(refs) {
        for n in 1..=MAX_N {
            let (m, t) = modified_precision(h, rs, n);
            matches[n - 1] += m;
            totals[n - 1] += t;
        }
        hyp_len += h.len();
        ref_len += rs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(h.len()), l))
            .expect("non-empty reference set");
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let score = if matches.contains(&0) {
        0.0
    } else {
        let log_mean = (0..MAX_N)
            .map(|i| (matches[i] as f64 / totals[i] as f64).ln())
            .sum::<f64>()
            / MAX_N as f64;
        brevity_penalty * log_mean.exp()
    };
    Ok(BleuStats {
        matches,
        totals,
        hyp_len,
        ref_len,
        brevity_penalty,
        score,
    })
}

pub fn bleu4(hyps: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Result<f64> {
    Ok(bleu4_stats(hyps, refs)?.score)
}

/// Original CIDEr: for n = 1..4, TF-IDF vectors with
/// `idf(g) = ln(N / max(1, df(g)))`, where `df` counts the examples whose
/// reference set contains `g`; cosine similarity of the hypothesis against
/// each reference, averaged over references and n, scaled by 10 and
/// averaged over the corpus. No length penalty or count clipping.
pub fn cider(hyps: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Result<f64> {
    Ok(cider_per_example(hyps, refs)?.iter().sum::<f64>() / hyps.len() as f64)
}

pub fn cider_per_example(hyps: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Result<Vec<f64>> {
    check_corpus(hyps, refs)?;
    if hyps.len() < 2 {
        return Err(Error::InvalidArgument(
            "CIDEr needs at least two examples to estimate document frequencies".into(),
        ));
    }
    let n_docs = hyps.len() as f64;
    let mut scores = vec![0.0; hyps.len()];
    for n in 1..=MAX_N {
        let ref_counts: Vec<Vec<Counts>> = refs
            .iter()
            .map(|rs| rs.iter().map(|r| ngrams(r, n)).collect())
            .collect();
        let mut df: HashMap<&[String], usize> = HashMap::new();
        for rs in &ref_counts {
            let mut seen: Vec<&[String]> = rs.iter().flat_map(|c| c.keys().copied()).collect();
            seen.sort();
            seen.dedup();
            for g in seen {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        let idf = |g: &[String]| (n_docs / (*df.get(g).unwrap_or(&0)).max(1) as f64).ln();
        let weigh = |c: &Counts| -> HashMap<Vec<String>, f64> {
            c.iter().map(|(g, &k)| (g.to_vec(), k as f64 * idf(g))).collect()
        };
        for (i, h) in hyps.iter().enumerate() {
            let hv = weigh(&ngrams(h, n));
            let hn = norm(&hv);
            let mut sum = 0.0;
            for rc in &ref_counts[i] {
                let rv = weigh(rc);
                let rn = norm(&rv);
                if hn > 0.0 && rn > 0.0 {
                    let dot: f64 = hv.iter().map(|(g, w)| w * rv.get(g).unwrap_or(&0.0)).sum();
                    sum += dot / (hn * rn);
                }
            }
            scores[i] += sum / ref_counts[i].len() as f64 / MAX_N as f64 * 10.0;
        }
    }
    Ok(scores)
}

fn norm(v: &HashMap<Vec<String>, f64>) -> f64 {
    v.values().map(|w| w * w).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn bleu_perfect_and_disjoint() {
        let h = vec![toks("a cat sat on the mat")];
        let r = vec![vec![toks("a cat sat on the mat")]];
        assert_eq!(bleu4(&h, &r).unwrap(), 1.0);
        let h = vec![toks("dogs run fast today")];
        assert_eq!(bleu4(&h, &r).unwrap(), 0.0);
    }

    #[test]
    fn bleu_clipping_case() {
        let h = toks("the the the the the the the");
        let r = vec![toks("the cat is on the mat")];
        assert_eq!(modified_precision(&h, &r, 1), (2, 7));
        let stats = bleu4_stats(&[h], &[r]).unwrap();
        assert_eq!(stats.precision(1), 2.0 / 7.0);
    }

    #[test]
    fn bleu_brevity_penalty() {
        let h = vec![toks("a b c d")];
        let r = vec![vec![toks("a b c d e f g h")]];
        let s = bleu4_stats(&h, &r).unwrap();
        assert!((s.brevity_penalty - (1.0f64 - 2.0).exp()).abs() < 1e-15);
    }

    #[test]
    fn cider_perfect_and_disjoint() {
        let h = vec![toks("a red fox runs home"), toks("two blue cars wait outside")];
        let r: Vec<Vec<Vec<String>>> = h.iter().map(|x| vec![x.clone()]).collect();
        assert!((cider(&h, &r).unwrap() - 10.0).abs() < 1e-12);
        let bad = vec![toks("zz yy xx ww"), toks("qq pp oo nn")];
        assert_eq!(cider(&bad, &r).unwrap(), 0.0);
    }

    #[test]
    fn cider_needs_two_examples() {
        let h = vec![toks("a b c d")];
        let r = vec![vec![toks("a b c d")]];
        assert!(cider(&h, &r).is_err());
        assert!(matches!(bleu4(&[], &[]), Err(Error::EmptyCorpus)));
    }
}
