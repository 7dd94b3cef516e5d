use std::collections::HashSet;

use super::kmeans::{best_centroid, spherical_kmeans};
use super::{check_query, dot, to_stored, top_k, SearchHit};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct InvertedList {
    pub(crate) ids: Vec<u64>,
    pub(crate) vectors: Vec<f32>,
}

/// Inverted-file index: records partitioned by their best-matching centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    pub(crate) dim: usize,
    pub(crate) centroids: Vec<f32>,
    pub(crate) lists: Vec<InvertedList>,
    pub(crate) train_seed: u64,
}

/// Trains centroids with seeded spherical k-means and files every vector
/// under the centroid it matches best.
pub fn train_ivf<'a>(
    items: impl IntoIterator<Item = (u64, &'a [f64])>,
    n_clusters: usize,
    seed: u64,
    iters: usize,
) -> Result<IvfIndex> {
    let mut ids = Vec::new();
    let mut stored = Vec::new();
    let mut seen = HashSet::new();
    let mut dim = None;
    for (id, v) in items {
        let expected = *dim.get_or_insert(v.len());
        if v.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: v.len(),
            });
        }
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id));
        }
        ids.push(id);
        stored.push(to_stored(v)?);
    }
    if n_clusters == 0 {
        return Err(Error::InvalidArgument("cluster count must be positive".into()));
    }
    if stored.len() < n_clusters {
        return Err(Error::TooFewVectors {
            vectors: stored.len(),
            clusters: n_clusters,
        });
    }
    let dim = dim.unwrap_or(0);
    let points: Vec<Vec<f64>> = stored
        .iter()
        .map(|v| v.iter().map(|&x| f64::from(x)).collect())
        .collect();
    let km = spherical_kmeans(&points, n_clusters, seed, iters)?;

    let centroids: Vec<f32> = km.centroids.iter().flatten().map(|&x| x as f32).collect();
    let index = IvfIndex::from_parts(dim, centroids, vec![InvertedList::default(); n_clusters], seed);
    let rounded = index.centroids_f64();
    let mut lists = vec![InvertedList::default(); n_clusters];
    for ((id, v), p) in ids.into_iter().zip(&stored).zip(&points) {
        let c = best_centroid(p, &rounded);
        lists[c].ids.push(id);
        lists[c].vectors.extend_from_slice(v);
    }
    Ok(IvfIndex { lists, ..index })
}

impl IvfIndex {
    pub(crate) fn from_parts(dim: usize, centroids: Vec<f32>, lists: Vec<InvertedList>, train_seed: u64) -> Self {
        Self {
            dim,
            centroids,
            lists,
            train_seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_clusters(&self) -> usize {
        self.lists.len()
    }

    pub fn train_seed(&self) -> u64 {
        self.train_seed
    }

    pub fn len(&self) -> usize {
        self.lists.iter().map(|l| l.ids.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn centroid(&self, c: usize) -> &[f32] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// Record ids filed under centroid `c`.
    pub fn list_ids(&self, c: usize) -> &[u64] {
        &self.lists[c].ids
    }

    pub(crate) fn centroids_f64(&self) -> Vec<Vec<f64>> {
        self.centroids
            .chunks_exact(self.dim)
            .map(|c| c.iter().map(|&x| f64::from(x)).collect())
            .collect()
    }

    pub fn search(&self, query: &[f64], k: usize, nprobe: usize) -> Result<Vec<SearchHit>> {
        if nprobe == 0 || nprobe > self.n_clusters() {
            return Err(Error::NprobeOutOfRange {
                nprobe,
                n_clusters: self.n_clusters(),
            });
        }
        let q = check_query(query, self.dim, k)?;
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let mut cells: Vec<(usize, f64)> = (0..self.n_clusters())
            .map(|c| (c, dot(&q, self.centroid(c))))
            .collect();
        cells.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut hits = Vec::new();
        for &(c, _) in &cells[..nprobe] {
            let list = &self.lists[c];
            hits.extend(
                list.ids
                    .iter()
                    .zip(list.vectors.chunks_exact(self.dim))
                    .map(|(&id, v)| SearchHit { id, score: dot(&q, v) }),
            );
        }
        Ok(top_k(hits, k))
    }
}
