//! Caption metrics, the nearest-caption baseline and evaluation reports.

pub mod metrics;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use metrics::{bleu4, bleu4_stats, cider, cider_per_example, modified_precision, BleuStats};

use crate::caption::Captioner;
use crate::datastore::{source_distribution, Datastore, RetrievalLog};
use crate::error::{Error, Result};
use crate::tokenizer::eval_tokens;

pub const CIDER_VARIANT: &str = "CIDEr (original formulation: tf-idf n-gram cosine, n=1..4, x10; no length penalty, no clipping)";

/// Text of the single nearest datastore caption.
pub fn retrieval_only_baseline(store: &Datastore, image: &[f64]) -> Result<String> {
    let hits = store.retrieve(image, 1)?;
    hits.first()
        .map(|(r, _)| r.text.clone())
        .ok_or(Error::EmptyStore)
}

/// An image with its reference captions.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalExample {
    pub image: Vec<f64>,
    pub references: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu4: f64,
    pub cider: f64,
    pub n_examples: usize,
    pub source_distribution: BTreeMap<String, f64>,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# metric: {CIDER_VARIANT}").unwrap();
        writeln!(s, "examples\t{}", self.n_examples).unwrap();
        writeln!(s, "bleu4\t{:.6}", self.bleu4).unwrap();
        writeln!(s, "cider\t{:.6}", self.cider).unwrap();
        for (src, frac) in &self.source_distribution {
            writeln!(s, "source\t{src}\t{frac:.6}").unwrap();
        }
        writeln!(s, "config\t{}", self.config).unwrap();
        s
    }
}

/// Scores caption strings against reference strings with the metric tokenization.
pub fn score_texts<S: AsRef<str>, R: AsRef<str>>(hyps: &[S], refs: &[Vec<R>]) -> Result<(f64, f64)> {
    let h: Vec<Vec<String>> = hyps.iter().map(|x| eval_tokens(x.as_ref())).collect();
    let r: Vec<Vec<Vec<String>>> = refs
        .iter()
        .map(|rs| rs.iter().map(|x| eval_tokens(x.as_ref())).collect())
        .collect();
    Ok((bleu4(&h, &r)?, cider(&h, &r)?))
}

/// Captions every example and scores the result.
pub fn evaluate(captioner: &Captioner, examples: &[EvalExample]) -> Result<(EvalReport, Vec<String>)> {
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut log = RetrievalLog::new();
    let mut hyps = Vec::with_capacity(examples.len());
    for (i, ex) in examples.iter().enumerate() {
        hyps.push(captioner.caption_logged(i as u64, &ex.image, Some(&mut log))?.text);
    }
    let refs: Vec<Vec<String>> = examples.iter().map(|e| e.references.clone()).collect();
    let (b, c) = score_texts(&hyps, &refs)?;
    let dist = if log.is_empty() {
        BTreeMap::new()
    } else {
        source_distribution(&log)?
    };
    let report = EvalReport {
        bleu4: b,
        cider: c,
        n_examples: examples.len(),
        source_distribution: dist,
        config: serde_json::to_value(&captioner.settings).expect("settings serialize"),
    };
    Ok((report, hyps))
}

/// Scores the nearest-caption baseline.
pub fn evaluate_retrieval_only(store: &Datastore, examples: &[EvalExample]) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let hyps = examples
        .iter()
        .map(|e| retrieval_only_baseline(store, &e.image))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<Vec<String>> = examples.iter().map(|e| e.references.clone()).collect();
    score_texts(&hyps, &refs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub bleu4: f64,
    pub cider: f64,
}

/// Evaluates a fixed model with prompts built from each `k`.
pub fn sweep_k(captioner: &Captioner, examples: &[EvalExample], ks: &[usize]) -> Result<Vec<SweepRow>> {
    if ks.contains(&0) {
        return Err(Error::InvalidArgument("k values must be at least 1".into()));
    }
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut settings = captioner.settings.clone();
        settings.k = k;
        settings.retrieval = true;
        let c = Captioner::new(captioner.params, captioner.tokenizer, captioner.store, settings)?;
        let (report, _) = evaluate(&c, examples)?;
        rows.push(SweepRow {
            k,
            bleu4: report.bleu4,
            cider: report.cider,
        });
    }
    Ok(rows)
}
