//! Source-tagged caption collections backed by a nearest-neighbor index.
//!
//! A [`Datastore`] is an immutable value: [`Datastore::swap`] and
//! [`Datastore::augment`] return new stores with freshly built indexes.

pub mod records;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;
use crate::vector_index::{
    load_index, save_index, train_ivf, AnyIndex, FlatIndex, DEFAULT_CLUSTERS, DEFAULT_KMEANS_ITERS,
    DEFAULT_NPROBE,
};

pub const DEFAULT_MAX_TOKENS: usize = 25;
pub const DEFAULT_K: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionRecord {
    pub id: u64,
    pub text: String,
    pub tokens: Vec<u32>,
    pub source: String,
    pub embedding: Vec<f64>,
}

/// Caption text with its source tag and precomputed embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCaption {
    pub text: String,
    pub source: String,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    /// Captions must be strictly shorter than this many tokens.
    pub max_tokens: usize,
    /// Drop exact duplicate texts, keeping the first occurrence.
    pub dedup: bool,
    pub first_id: u64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            max_tokens: DEFAULT_MAX_TOKENS,
            dedup: false,
            first_id: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub records: Vec<CaptionRecord>,
    pub dropped_long: usize,
    pub dropped_duplicate: usize,
}

/// Tokenizes captions, filters by length and assigns sequential ids in input order.
pub fn ingest(raw: &[RawCaption], tokenizer: &Tokenizer, opts: &IngestOptions) -> Result<Ingested> {
    let mut records = Vec::new();
    let mut dropped_long = 0;
    let mut dropped_duplicate = 0;
    let mut seen = HashSet::new();
    let mut next_id = opts.first_id;
    for r in raw {
        if r.source.is_empty() {
            return Err(Error::InvalidArgument(format!("caption {:?} has an empty source tag", r.text)));
        }
        let tokens = tokenizer.encode(&r.text);
        if tokens.len() >= opts.max_tokens {
            dropped_long += 1;
            continue;
        }
        if opts.dedup && !seen.insert(r.text.as_str()) {
            dropped_duplicate += 1;
            continue;
        }
        records.push(CaptionRecord {
            id: next_id,
            text: r.text.clone(),
            tokens,
            source: r.source.clone(),
            embedding: r.embedding.clone(),
        });
        next_id += 1;
    }
    if records.is_empty() {
        return Err(Error::EmptyAfterFilter {
            dropped: dropped_long + dropped_duplicate,
        });
    }
    Ok(Ingested {
        records,
        dropped_long,
        dropped_duplicate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexChoice {
    /// Flat below `flat_threshold` records, IVF at or above it.
    Auto,
    Flat,
    Ivf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexPolicy {
    pub kind: IndexChoice,
    pub flat_threshold: usize,
    pub n_clusters: usize,
    pub nprobe: usize,
    pub seed: u64,
    pub iters: usize,
}

impl Default for IndexPolicy {
    fn default() -> Self {
        Self {
            kind: IndexChoice::Auto,
            flat_threshold: 10_000,
            n_clusters: DEFAULT_CLUSTERS,
            nprobe: DEFAULT_NPROBE,
            seed: 0,
            iters: DEFAULT_KMEANS_ITERS,
        }
    }
}

impl IndexPolicy {
    fn use_ivf(&self, n: usize) -> bool {
        match self.kind {
            IndexChoice::Auto => n >= self.flat_threshold,
            IndexChoice::Flat => false,
            IndexChoice::Ivf => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Datastore {
    dim: usize,
    policy: IndexPolicy,
    records: BTreeMap<u64, CaptionRecord>,
    index: AnyIndex,
    nprobe: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedHit {
    pub record_id: u64,
    pub source: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalEvent {
    pub query_id: u64,
    pub hits: Vec<LoggedHit>,
}

/// Append-only record of retrievals. Single writer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalLog {
    pub events: Vec<RetrievalEvent>,
}

impl RetrievalLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, query_id: u64, hits: &[(&CaptionRecord, f64)]) {
        self.events.push(RetrievalEvent {
            query_id,
            hits: hits
                .iter()
                .map(|(r, s)| LoggedHit {
                    record_id: r.id,
                    source: r.source.clone(),
                    score: *s,
                })
                .collect(),
        });
    }

    pub fn is_empty(&self) -> bool {
        self.events.iter().all(|e| e.hits.is_empty())
    }
}

/// Fraction of all retrieved entries contributed by each source.
pub fn source_distribution(log: &RetrievalLog) -> Result<BTreeMap<String, f64>> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut total = 0usize;
    for hit in log.events.iter().flat_map(|e| &e.hits) {
        *counts.entry(hit.source.clone()).or_default() += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::EmptyLog);
    }
    Ok(counts
        .into_iter()
        .map(|(s, c)| (s, c as f64 / total as f64))
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreMeta {
    dim: usize,
    records: usize,
    index: String,
    policy: IndexPolicy,
    sources: Vec<String>,
}

impl Datastore {
    pub fn build(dim: usize, records: Vec<CaptionRecord>, policy: IndexPolicy) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyStore);
        }
        let mut map = BTreeMap::new();
        for r in records {
            if r.embedding.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: r.embedding.len(),
                });
            }
            if r.source.is_empty() {
                return Err(Error::InvalidArgument(format!("record {} has an empty source tag", r.id)));
            }
            let id = r.id;
            if map.insert(id, r).is_some() {
                return Err(Error::IdCollision(id));
            }
        }
        let items = map.values().map(|r| (r.id, r.embedding.as_slice()));
        let (index, nprobe) = if policy.use_ivf(map.len()) {
            let clusters = policy.n_clusters.min(map.len()).max(1);
            let ivf = train_ivf(items, clusters, policy.seed, policy.iters)?;
            (AnyIndex::Ivf(ivf), policy.nprobe.clamp(1, clusters))
        } else {
            (AnyIndex::Flat(FlatIndex::build(dim, items)?), 0)
        };
        Ok(Self {
            dim,
            policy,
            records: map,
            index,
            nprobe,
        })
    }

    /// A new store holding only `new_records`, under the same dimension and policy.
    pub fn swap(&self, new_records: Vec<CaptionRecord>) -> Result<Self> {
        Self::build(self.dim, new_records, self.policy.clone())
    }

    /// A new store holding the existing records plus `extra`.
    pub fn augment(&self, extra: Vec<CaptionRecord>) -> Result<Self> {
        if extra.is_empty() {
            return Ok(self.clone());
        }
        if let Some(r) = extra.iter().find(|r| self.records.contains_key(&r.id)) {
            return Err(Error::IdCollision(r.id));
        }
        let all = self.records.values().cloned().chain(extra).collect();
        Self::build(self.dim, all, self.policy.clone())
    }

    pub fn retrieve(&self, embedding: &[f64], k: usize) -> Result<Vec<(&CaptionRecord, f64)>> {
        if self.records.is_empty() {
            return Err(Error::EmptyStore);
        }
        let hits = self.index.search(embedding, k, self.nprobe)?;
        Ok(hits
            .into_iter()
            .map(|h| (&self.records[&h.id], h.score))
            .collect())
    }

    pub fn retrieve_logged(
        &self,
        query_id: u64,
        embedding: &[f64],
        k: usize,
        log: &mut RetrievalLog,
    ) -> Result<Vec<(&CaptionRecord, f64)>> {
        let hits = self.retrieve(embedding, k)?;
        log.record(query_id, &hits);
        Ok(hits)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn policy(&self) -> &IndexPolicy {
        &self.policy
    }

    pub fn index(&self) -> &AnyIndex {
        &self.index
    }

    pub fn get(&self, id: u64) -> Option<&CaptionRecord> {
        self.records.get(&id)
    }

    /// Records in ascending id order.
    pub fn records(&self) -> impl Iterator<Item = &CaptionRecord> {
        self.records.values()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.records.keys().copied().collect()
    }

    pub fn sources(&self) -> BTreeSet<&str> {
        self.records.values().map(|r| r.source.as_str()).collect()
    }

    pub fn source_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for r in self.records.values() {
            *counts.entry(r.source.as_str()).or_default() += 1;
        }
        counts
    }

    /// Writes `records.tsv`, `index.bin`, `vocab.txt` and `store.json` into `dir`.
    pub fn save(&self, dir: &Path, tokenizer: &Tokenizer) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_records(&dir.join("records.tsv"), self.records.values())?;
        save_index(&self.index, &dir.join("index.bin"))?;
        tokenizer.save(&dir.join("vocab.txt"))?;
        let meta = StoreMeta {
            dim: self.dim,
            records: self.len(),
            index: match self.index {
                AnyIndex::Flat(_) => "flat".into(),
                AnyIndex::Ivf(_) => "ivf".into(),
            },
            policy: self.policy.clone(),
            sources: self.sources().into_iter().map(str::to_owned).collect(),
        };
        let path = dir.join("store.json");
        let json = serde_json::to_string_pretty(&meta).expect("store metadata serializes");
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }

    /// Loads a store directory written by [`Datastore::save`].
    pub fn load(dir: &Path) -> Result<(Self, Tokenizer)> {
        let path = dir.join("store.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: StoreMeta =
            serde_json::from_str(&text).map_err(|e| Error::format("store metadata", e.to_string()))?;
        let tokenizer = Tokenizer::load(&dir.join("vocab.txt"))?;
        let mut map = BTreeMap::new();
        for (id, text, source, embedding) in records::read(&dir.join("records.tsv"), None)? {
            if embedding.len() != meta.dim {
                return Err(Error::DimensionMismatch {
                    expected: meta.dim,
                    found: embedding.len(),
                });
            }
            let tokens = tokenizer.encode(&text);
            if map
                .insert(id, CaptionRecord { id, text, tokens, source, embedding })
                .is_some()
            {
                return Err(Error::IdCollision(id));
            }
        }
        let index = load_index(&dir.join("index.bin"))?;
        let mut indexed: Vec<u64> = match &index {
            AnyIndex::Flat(f) => f.ids().to_vec(),
            AnyIndex::Ivf(i) => (0..i.n_clusters()).flat_map(|c| i.list_ids(c).to_vec()).collect(),
        };
        indexed.sort_unstable();
        if index.dim() != meta.dim || !indexed.iter().copied().eq(map.keys().copied()) {
            return Err(Error::format("store", "index does not match records"));
        }
        let nprobe = match &index {
            AnyIndex::Flat(_) => 0,
            AnyIndex::Ivf(i) => meta.policy.nprobe.clamp(1, i.n_clusters()),
        };
        Ok((
            Self {
                dim: meta.dim,
                policy: meta.policy,
                records: map,
                index,
                nprobe,
            },
            tokenizer,
        ))
    }
}

pub fn write_records<'a>(path: &Path, records: impl IntoIterator<Item = &'a CaptionRecord>) -> Result<()> {
    let mut out = String::from(records::HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&records::format_line(r.id, &r.text, &r.source, &r.embedding));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a record file as raw captions (ids are discarded; ingest reassigns them).
pub fn read_raw(path: &Path, vectors: Option<&[Vec<f64>]>) -> Result<Vec<RawCaption>> {
    Ok(records::read(path, vectors)?
        .into_iter()
        .map(|(_, text, source, embedding)| RawCaption { text, source, embedding })
        .collect())
}
