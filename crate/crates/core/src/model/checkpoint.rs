//! Single-file model checkpoints.
//!
//! ```text
//! magic "RAGCAPCK" | version u32
//! config   len u64 | JSON bytes
//! seeds    backbone u64 | theta u64
//! tensors  count u32, then per tensor:
//!          name len u32 | name | ndim u32 | dims u64* | values f64*
//! vocab    len u64 | vocabulary text (len 0 when absent)
//! ```
//! Values are stored as 64-bit little-endian floats so a reload is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use super::config::ModelConfig;
use super::params::{ModelParams, Seeds};
use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;
use crate::vector_index::persist::{read_file, write_file, ByteReader, ByteWriter};

const MAGIC: &[u8; 8] = b"RAGCAPCK";
const WHAT: &str = "checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub tokenizer: Option<Tokenizer>,
}

fn push_tensor(w: &mut ByteWriter, name: &str, shape: &[usize], data: &[f64]) {
    w.u32(name.len() as u32);
    w.bytes(name.as_bytes());
    w.u32(shape.len() as u32);
    for &d in shape {
        w.u64(d as u64);
    }
    w.f64s(data);
}

pub fn encode_checkpoint(params: &ModelParams, tokenizer: Option<&Tokenizer>) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(MAGIC);
    w.u32(1);
    let config = serde_json::to_vec(&params.config).expect("config serializes");
    w.u64(config.len() as u64);
    w.bytes(&config);
    w.u64(params.seeds.backbone);
    w.u64(params.seeds.theta);
    let backbone = params.backbone.tensors();
    let theta = params.theta.tensors();
    w.u32((backbone.len() + theta.len()) as u32);
    for (name, shape, data) in &backbone {
        push_tensor(&mut w, name, shape, data);
    }
    for (name, t) in &theta {
        push_tensor(&mut w, name, t.shape(), t.as_slice().expect("standard layout"));
    }
    let vocab = tokenizer.map(|t| t.to_vocab_text()).unwrap_or_default();
    w.u64(vocab.len() as u64);
    w.bytes(vocab.as_bytes());
    w.0
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = ByteReader::new(bytes, WHAT);
    r.magic(MAGIC)?;
    let n = r.usize()?;
    let config: ModelConfig =
        serde_json::from_slice(r.take(n)?).map_err(|e| Error::format(WHAT, format!("config: {e}")))?;
    config.validate()?;
    let seeds = Seeds {
        backbone: r.u64()?,
        theta: r.u64()?,
    };
    let count = r.u32()? as usize;
    let mut sections: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(WHAT, "tensor name is not UTF-8"))?
            .to_string();
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::format(WHAT, "tensor too large"))?;
        let data = r.f64s(numel)?;
        if sections.insert(name.clone(), (shape, data)).is_some() {
            return Err(Error::format(WHAT, format!("duplicate tensor {name}")));
        }
    }
    let vlen = r.usize()?;
    let vocab = std::str::from_utf8(r.take(vlen)?).map_err(|_| Error::format(WHAT, "vocabulary is not UTF-8"))?;
    r.finish()?;
    let tokenizer = if vocab.is_empty() {
        None
    } else {
        Some(Tokenizer::from_vocab_text(vocab)?)
    };

    let mut params = ModelParams::zeroed(config, seeds);
    let mut take = |name: &str, shape: &[usize], dst: &mut [f64]| -> Result<()> {
        let (s, data) = sections
            .remove(name)
            .ok_or_else(|| Error::format(WHAT, format!("missing tensor {name}")))?;
        if s != shape {
            return Err(Error::format(WHAT, format!("tensor {name} has shape {s:?}, expected {shape:?}")));
        }
        dst.copy_from_slice(&data);
        Ok(())
    };
    let names: Vec<(String, Vec<usize>)> = params
        .backbone
        .tensors()
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect();
    for ((name, shape), dst) in names.iter().zip(params.backbone.tensors_mut()) {
        take(name, shape, dst)?;
    }
    let names: Vec<(String, Vec<usize>)> = params
        .theta
        .tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    for ((name, shape), dst) in names.iter().zip(params.theta.tensors_mut()) {
        take(name, shape, dst.as_slice_mut().expect("standard layout"))?;
    }
    if let Some(extra) = sections.keys().next() {
        return Err(Error::format(WHAT, format!("unexpected tensor {extra}")));
    }
    if let Some(tok) = &tokenizer {
        if tok.len() != params.config.vocab_size {
            return Err(Error::format(
                WHAT,
                format!("vocabulary has {} entries, model expects {}", tok.len(), params.config.vocab_size),
            ));
        }
    }
    Ok(Checkpoint { params, tokenizer })
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, tokenizer: Option<&Tokenizer>) -> Result<()> {
    write_file(path, &encode_checkpoint(params, tokenizer))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path)?)
}
