#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| (0..dim).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Brute-force top-k over vectors stored the way the index stores them
/// (normalized, then rounded to f32); ties go to the smaller id.
pub fn exhaustive_top_k(data: &[Vec<f64>], query: &[f64], k: usize) -> Vec<u64> {
    let unit = |v: &[f64]| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let q = unit(query);
    let mut scored: Vec<(f64, u64)> = data
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let s: f64 = unit(v).iter().zip(&q).map(|(a, b)| f64::from(*a as f32) * b).sum();
            (s, i as u64)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, id)| id).collect()
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

fn ngram_counts(w: &[String], n: usize) -> HashMap<Vec<String>, f64> {
    let mut m = HashMap::new();
    if w.len() >= n {
        for g in w.windows(n) {
            *m.entry(g.to_vec()).or_insert(0.0) += 1.0;
        }
    }
    m
}

/// Straight-line CIDEr: tf-idf over raw n-gram counts with document
/// frequency taken over reference sets, cosine per reference, averaged
/// over references and n = 1..4, times ten.
pub fn cider_oracle(hyps: &[&str], refs: &[Vec<&str>]) -> f64 {
    let n_docs = refs.len() as f64;
    let mut total = 0.0;
    for (h, rs) in hyps.iter().zip(refs) {
        let mut per_n = 0.0;
        for n in 1..=4 {
            let mut df: HashMap<Vec<String>, f64> = HashMap::new();
            for set in refs {
                let grams: HashSet<Vec<String>> = set
                    .iter()
                    .flat_map(|r| ngram_counts(&words(r), n).into_keys())
                    .collect();
                for g in grams {
                    *df.entry(g).or_insert(0.0) += 1.0;
                }
            }
            let vec_of = |s: &str| -> HashMap<Vec<String>, f64> {
                ngram_counts(&words(s), n)
                    .into_iter()
                    .map(|(g, c)| {
                        let d = df.get(&g).copied().unwrap_or(0.0).max(1.0);
                        let w = c * (n_docs / d).ln();
                        (g, w)
                    })
                    .collect()
            };
            let hv = vec_of(h);
            let norm = |v: &HashMap<Vec<String>, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();
            let mut sum = 0.0;
            for r in rs {
                let rv = vec_of(r);
                let dot: f64 = hv.iter().map(|(g, x)| x * rv.get(g).copied().unwrap_or(0.0)).sum();
                let denom = norm(&hv) * norm(&rv);
                if denom > 0.0 {
                    sum += dot / denom;
                }
            }
            per_n += sum / rs.len() as f64;
        }
        total += 10.0 * per_n / 4.0;
    }
    total / hyps.len() as f64
}

pub fn to_tokens(xs: &[&str]) -> Vec<Vec<String>> {
    xs.iter().map(|s| words(s)).collect()
}

pub fn to_ref_tokens(xs: &[Vec<&str>]) -> Vec<Vec<Vec<String>>> {
    xs.iter().map(|rs| rs.iter().map(|s| words(s)).collect()).collect()
}
