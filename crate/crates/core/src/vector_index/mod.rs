//! Exact and inverted-file nearest-neighbor search over unit vectors.
//!
//! Vectors are L2-normalized on insertion and stored as `f32`, so inner
//! product equals cosine similarity. Scores are accumulated in `f64`.
//! Result lists are ordered by descending score, ties by ascending id.

mod flat;
mod ivf;
mod kmeans;
pub(crate) mod persist;

pub use flat::FlatIndex;
pub use ivf::{train_ivf, IvfIndex};
pub use kmeans::{spherical_kmeans, KMeans};
pub use persist::{load_index, read_vectors, save_index, write_vectors, AnyIndex};

use std::cmp::Ordering;

use crate::error::{Error, Result};

pub const DEFAULT_CLUSTERS: usize = 64;
pub const DEFAULT_NPROBE: usize = 16;
pub const DEFAULT_KMEANS_ITERS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchHit {
    pub id: u64,
    pub score: f64,
}

/// Returns `v / |v|`.
pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Normalized vector rounded to the `f32` storage precision.
pub(crate) fn to_stored(v: &[f64]) -> Result<Vec<f32>> {
    Ok(normalize(v)?.into_iter().map(|x| x as f32).collect())
}

pub(crate) fn dot(query: &[f64], stored: &[f32]) -> f64 {
    query
        .iter()
        .zip(stored)
        .map(|(q, s)| q * f64::from(*s))
        .sum()
}

pub(crate) fn hit_order(a: &SearchHit, b: &SearchHit) -> Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

/// Keeps the best `k` hits in result order.
pub(crate) fn top_k(mut hits: Vec<SearchHit>, k: usize) -> Vec<SearchHit> {
    if hits.len() > k {
        hits.select_nth_unstable_by(k - 1, hit_order);
        hits.truncate(k);
    }
    hits.sort_by(hit_order);
    hits
}

pub(crate) fn check_query(query: &[f64], dim: usize, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if query.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: query.len(),
        });
    }
    normalize(query)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
        assert_eq!(normalize(&[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0, 0.0]);
        let err = normalize(&[0.0, 0.0]).unwrap_err();
        assert_eq!(err.to_string(), "cannot normalize zero vector");
        assert!(matches!(normalize(&[f64::NAN, 1.0]), Err(Error::NonFinite)));
    }

    #[test]
    fn stored_vectors_are_unit_within_tolerance() {
        let v = to_stored(&[0.3, -1.7, 2.2, 0.01]).unwrap();
        let norm: f64 = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn top_k_orders_ties_by_id() {
        let hits = vec![
            SearchHit { id: 5, score: 0.5 },
            SearchHit { id: 2, score: 0.5 },
            SearchHit { id: 9, score: 0.9 },
            SearchHit { id: 1, score: 0.1 },
        ];
        let ids: Vec<u64> = top_k(hits, 3).iter().map(|h| h.id).collect();
        assert_eq!(ids, vec![9, 2, 5]);
    }
}
