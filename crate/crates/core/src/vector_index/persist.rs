//! Binary persistence for indexes and plain vector files.
//!
//! All integers and floats are little-endian.
//!
//! Index file:
//! ```text
//! magic "RAGCAPIX" | version u32 | kind u32 (0 flat, 1 ivf) | dim u32 | count u64
//! vectors  count*dim f32
//! ids      count u64
//! ivf only: n_clusters u32 | train_seed u64 | centroids n_clusters*dim f32
//!           | list offsets (n_clusters+1) u64
//! ```
//! IVF records are written grouped by inverted list; list `c` spans
//! `offsets[c]..offsets[c+1]`.
//!
//! Vector file: `magic "RAGCAPVF" | version u32 | dim u32 | count u64 | count*dim f32`.

use std::path::Path;

use super::ivf::InvertedList;
use super::{FlatIndex, IvfIndex, SearchHit};
use crate::error::{Error, Result};

const INDEX_MAGIC: &[u8; 8] = b"RAGCAPIX";
const VECTOR_MAGIC: &[u8; 8] = b"RAGCAPVF";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum AnyIndex {
    Flat(FlatIndex),
    Ivf(IvfIndex),
}

impl AnyIndex {
    pub fn dim(&self) -> usize {
        match self {
            AnyIndex::Flat(i) => i.dim(),
            AnyIndex::Ivf(i) => i.dim(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            AnyIndex::Flat(i) => i.len(),
            AnyIndex::Ivf(i) => i.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `nprobe` is ignored by flat indexes.
    pub fn search(&self, query: &[f64], k: usize, nprobe: usize) -> Result<Vec<SearchHit>> {
        match self {
            AnyIndex::Flat(i) => i.search(query, k),
            AnyIndex::Ivf(i) => i.search(query, k, nprobe),
        }
    }
}

pub(crate) struct ByteWriter(pub(crate) Vec<u8>);

impl ByteWriter {
    pub(crate) fn new() -> Self {
        Self(Vec::new())
    }
    pub(crate) fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    pub(crate) fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    pub(crate) fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    pub(crate) fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.bytes(&x.to_le_bytes());
        }
    }
    pub(crate) fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.bytes(&x.to_le_bytes());
        }
    }
}

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format(self.what, format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::format(self.what, format!("length {v} too large")))
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.what, "overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::format(self.what, "overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn magic(&mut self, magic: &[u8; 8]) -> Result<()> {
        if self.take(8)? != magic {
            return Err(Error::format(self.what, "bad magic"));
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::format(self.what, format!("unsupported version {version}")));
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(self.what, "trailing bytes"));
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_index(index: &AnyIndex) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(INDEX_MAGIC);
    w.u32(VERSION);
    match index {
        AnyIndex::Flat(flat) => {
            w.u32(0);
            w.u32(flat.dim() as u32);
            w.u64(flat.len() as u64);
            for pos in 0..flat.len() {
                w.f32s(flat.vector(pos));
            }
            for &id in flat.ids() {
                w.u64(id);
            }
        }
        AnyIndex::Ivf(ivf) => {
            w.u32(1);
            w.u32(ivf.dim as u32);
            w.u64(ivf.len() as u64);
            for list in &ivf.lists {
                w.f32s(&list.vectors);
            }
            for list in &ivf.lists {
                for &id in &list.ids {
                    w.u64(id);
                }
            }
            w.u32(ivf.n_clusters() as u32);
            w.u64(ivf.train_seed);
            w.f32s(&ivf.centroids);
            let mut offset = 0u64;
            w.u64(offset);
            for list in &ivf.lists {
                offset += list.ids.len() as u64;
                w.u64(offset);
            }
        }
    }
    w.0
}

pub fn decode_index(bytes: &[u8]) -> Result<AnyIndex> {
    let mut r = ByteReader::new(bytes, "index file");
    r.magic(INDEX_MAGIC)?;
    let kind = r.u32()?;
    let dim = r.u32()? as usize;
    let count = r.usize()?;
    if dim == 0 {
        return Err(Error::format("index file", "zero dimension"));
    }
    let vectors = r.f32s(count.saturating_mul(dim))?;
    let mut ids = Vec::with_capacity(count);
    for _ in 0..count {
        ids.push(r.u64()?);
    }
    let index = match kind {
        0 => {
            let mut flat = FlatIndex::new(dim)?;
            for (id, v) in ids.iter().zip(vectors.chunks_exact(dim)) {
                flat.push_stored(*id, v)?;
            }
            AnyIndex::Flat(flat)
        }
        1 => {
            let n_clusters = r.u32()? as usize;
            let train_seed = r.u64()?;
            let centroids = r.f32s(n_clusters.saturating_mul(dim))?;
            let mut offsets = Vec::with_capacity(n_clusters + 1);
            for _ in 0..=n_clusters {
                offsets.push(r.usize()?);
            }
            if offsets.first() != Some(&0)
                || offsets.last() != Some(&count)
                || offsets.windows(2).any(|w| w[0] > w[1])
            {
                return Err(Error::format("index file", "inconsistent list offsets"));
            }
            let mut seen = std::collections::HashSet::new();
            if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
                return Err(Error::DuplicateId(*dup));
            }
            let lists = offsets
                .windows(2)
                .map(|w| InvertedList {
                    ids: ids[w[0]..w[1]].to_vec(),
                    vectors: vectors[w[0] * dim..w[1] * dim].to_vec(),
                })
                .collect();
            AnyIndex::Ivf(IvfIndex::from_parts(dim, centroids, lists, train_seed))
        }
        other => return Err(Error::format("index file", format!("unknown index kind {other}"))),
    };
    r.finish()?;
    Ok(index)
}

pub fn save_index(index: &AnyIndex, path: &Path) -> Result<()> {
    write_file(path, &encode_index(index))
}

pub fn load_index(path: &Path) -> Result<AnyIndex> {
    decode_index(&read_file(path)?)
}

/// Writes row vectors as `f32`; every row must have the same width.
pub fn write_vectors(path: &Path, dim: usize, rows: &[Vec<f64>]) -> Result<()> {
    let mut w = ByteWriter::new();
    w.bytes(VECTOR_MAGIC);
    w.u32(VERSION);
    w.u32(dim as u32);
    w.u64(rows.len() as u64);
    for row in rows {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: row.len(),
            });
        }
        for &x in row {
            w.bytes(&(x as f32).to_le_bytes());
        }
    }
    write_file(path, &w.0)
}

/// Reads a vector file; returns `(dim, rows)` with values widened to `f64`.
pub fn read_vectors(path: &Path) -> Result<(usize, Vec<Vec<f64>>)> {
    let bytes = read_file(path)?;
    let mut r = ByteReader::new(&bytes, "vector file");
    r.magic(VECTOR_MAGIC)?;
    let dim = r.u32()? as usize;
    let count = r.usize()?;
    if dim == 0 && count > 0 {
        return Err(Error::format("vector file", "zero dimension"));
    }
    let data = r.f32s(count.saturating_mul(dim))?;
    r.finish()?;
    let rows = if dim == 0 {
        Vec::new()
    } else {
        data.chunks_exact(dim)
            .map(|c| c.iter().map(|&x| f64::from(x)).collect())
            .collect()
    };
    Ok((dim, rows))
}
