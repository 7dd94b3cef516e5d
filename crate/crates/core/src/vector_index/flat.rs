use std::collections::HashSet;

use super::{check_query, dot, to_stored, top_k, SearchHit};
use crate::error::{Error, Result};

/// Exhaustive inner-product index.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    dim: usize,
    ids: Vec<u64>,
    vectors: Vec<f32>,
    seen: HashSet<u64>,
}

impl FlatIndex {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            ids: Vec::new(),
            vectors: Vec::new(),
            seen: HashSet::new(),
        })
    }

    pub fn build<'a>(dim: usize, items: impl IntoIterator<Item = (u64, &'a [f64])>) -> Result<Self> {
        let mut index = Self::new(dim)?;
        for (id, v) in items {
            index.add(id, v)?;
        }
        Ok(index)
    }

    pub fn add(&mut self, id: u64, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        let stored = to_stored(vector)?;
        self.push_stored(id, &stored)
    }

    pub(crate) fn push_stored(&mut self, id: u64, stored: &[f32]) -> Result<()> {
        if !self.seen.insert(id) {
            return Err(Error::DuplicateId(id));
        }
        self.ids.push(id);
        self.vectors.extend_from_slice(stored);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Stored (normalized, `f32`) vector at insertion position `pos`.
    pub fn vector(&self, pos: usize) -> &[f32] {
        &self.vectors[pos * self.dim..(pos + 1) * self.dim]
    }

    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<SearchHit>> {
        let q = check_query(query, self.dim, k)?;
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let hits = self
            .ids
            .iter()
            .zip(self.vectors.chunks_exact(self.dim))
            .map(|(&id, v)| SearchHit { id, score: dot(&q, v) })
            .collect();
        Ok(top_k(hits, k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_basis() {
        let index = FlatIndex::build(2, [(0, &[1.0, 0.0][..]), (1, &[0.0, 1.0][..])]).unwrap();
        let hits = index.search(&[1.0, 0.0], 2).unwrap();
        assert_eq!(hits, vec![SearchHit { id: 0, score: 1.0 }, SearchHit { id: 1, score: 0.0 }]);
    }

    #[test]
    fn k_is_capped_by_size() {
        let index = FlatIndex::build(2, [(3, &[1.0, 1.0][..])]).unwrap();
        assert_eq!(index.search(&[1.0, 0.0], 10).unwrap().len(), 1);
    }

    #[test]
    fn errors() {
        let mut index = FlatIndex::new(3).unwrap();
        assert!(matches!(index.search(&[1.0, 0.0, 0.0], 1), Err(Error::EmptyIndex)));
        assert!(matches!(
            index.add(0, &[1.0, 0.0]),
            Err(Error::DimensionMismatch { expected: 3, found: 2 })
        ));
        index.add(0, &[1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(index.add(0, &[0.0, 1.0, 0.0]), Err(Error::DuplicateId(0))));
        assert!(matches!(index.search(&[1.0, 0.0], 1), Err(Error::DimensionMismatch { .. })));
        assert!(index.search(&[1.0, 0.0, 0.0], 0).is_err());
        assert!(matches!(index.add(1, &[0.0; 3]), Err(Error::ZeroVector)));
    }
}
