//! Line-delimited caption record files.
//!
//! The first line is the header `#ragcap-records v1`. Every following line
//! holds one record as four tab-separated fields:
//!
//! ```text
//! <id>\t<text>\t<source>\t<embedding>
//! ```
//!
//! Inside `text` and `source`, backslash, tab, newline and carriage return
//! are written as `\\`, `\t`, `\n` and `\r`. The embedding is either a
//! space-separated list of decimal floats (shortest round-trip form) or
//! `@<row>`, a reference to a row of a companion vector file.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const HEADER: &str = "#ragcap-records v1";

/// One parsed line of a record file; the embedding may still be a reference.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordLine {
    pub id: u64,
    pub text: String,
    pub source: String,
    pub embedding: EmbeddingField,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingField {
    Inline(Vec<f64>),
    Row(usize),
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => return Err(Error::format("record file", format!("bad escape {other:?}"))),
        }
    }
    Ok(out)
}

pub fn format_line(id: u64, text: &str, source: &str, embedding: &[f64]) -> String {
    let mut line = format!("{id}\t{}\t{}\t", escape(text), escape(source));
    for (i, x) in embedding.iter().enumerate() {
        if i > 0 {
            line.push(' ');
        }
        write!(line, "{x}").unwrap();
    }
    line
}

pub fn parse_line(line: &str, lineno: usize) -> Result<RecordLine> {
    let bad = |detail: &str| Error::format("record file", format!("line {lineno}: {detail}"));
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 4 {
        return Err(bad(&format!("expected 4 fields, found {}", fields.len())));
    }
    let id = fields[0].parse().map_err(|_| bad("invalid id"))?;
    let embedding = if let Some(row) = fields[3].strip_prefix('@') {
        EmbeddingField::Row(row.parse().map_err(|_| bad("invalid row reference"))?)
    } else {
        EmbeddingField::Inline(
            fields[3]
                .split(' ')
                .map(|x| x.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("invalid embedding value"))?,
        )
    };
    Ok(RecordLine {
        id,
        text: unescape(fields[1])?,
        source: unescape(fields[2])?,
        embedding,
    })
}

pub fn parse(text: &str) -> Result<Vec<RecordLine>> {
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(Error::format("record file", "missing header"));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| parse_line(l, i + 2))
        .collect()
}

/// Parses a record file, resolving `@row` references against `vectors`.
pub fn read(path: &Path, vectors: Option<&[Vec<f64>]>) -> Result<Vec<(u64, String, String, Vec<f64>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text)?
        .into_iter()
        .map(|r| {
            let emb = match r.embedding {
                EmbeddingField::Inline(v) => v,
                EmbeddingField::Row(row) => vectors
                    .and_then(|v| v.get(row))
                    .cloned()
                    .ok_or_else(|| Error::format("record file", format!("record {}: row {row} unavailable", r.id)))?,
            };
            Ok((r.id, r.text, r.source, emb))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escaping_round_trips() {
        let s = "tab\there\nnew \\ line\r";
        assert_eq!(unescape(&escape(s)).unwrap(), s);
        assert!(!escape(s).contains('\n'));
        assert!(!escape(s).contains('\t'));
    }

    #[test]
    fn line_round_trips_bit_exact() {
        let emb = vec![0.1, -1.0 / 3.0, 2e-300, 0.0];
        let line = format_line(7, "a\tb", "web", &emb);
        let r = parse_line(&line, 1).unwrap();
        assert_eq!(r.id, 7);
        assert_eq!(r.text, "a\tb");
        assert_eq!(r.embedding, EmbeddingField::Inline(emb));
    }

    #[test]
    fn row_references() {
        let r = parse_line("3\tx\ty\t@12", 1).unwrap();
        assert_eq!(r.embedding, EmbeddingField::Row(12));
        assert!(parse_line("3\tx\ty", 1).is_err());
        assert!(parse("3\tx\ty\t1 2").is_err());
    }
}
