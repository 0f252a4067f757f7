//! Sentence embedding files.
//!
//! Text variant:
//!
//! ```text
//! dim=<D> count=<N>
//! <id>\t<text>\t<v1> <v2> ... <vD>
//! ```
//!
//! Binary variant: the 8-byte magic `BQEMBF32`, then `dim` and `count` as
//! little-endian u32, then per record a u32-length-prefixed UTF-8 id, a
//! u32-length-prefixed UTF-8 text, and `dim` little-endian f32 values.
//!
//! [`load_embeddings`] sniffs the magic and dispatches to the right parser.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Location, Result};

pub const BINARY_MAGIC: &[u8; 8] = b"BQEMBF32";

/// One sentence as a fixed-dimension vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    source_id: Option<String>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("embedding component {i} is not finite")));
        }
        Ok(EmbeddingVector {
            values,
            source_id: None,
        })
    }

    pub fn with_source(mut self, id: impl Into<String>) -> Self {
        self.source_id = Some(id.into());
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn source_id(&self) -> Option<&str> {
        self.source_id.as_deref()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub text: String,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingFormat {
    Text,
    BinaryF32,
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Vec<EmbeddingRecord>> {
    let bytes = fs::read(path.as_ref())?;
    if bytes.starts_with(BINARY_MAGIC) {
        read_binary(&bytes[..])
    } else {
        read_text(&bytes[..])
    }
}

pub fn save_embeddings(path: impl AsRef<Path>, records: &[EmbeddingRecord], format: EmbeddingFormat) -> Result<()> {
    let mut buf = Vec::new();
    match format {
        EmbeddingFormat::Text => write_text(&mut buf, records)?,
        EmbeddingFormat::BinaryF32 => write_binary(&mut buf, records)?,
    }
    fs::write(path, buf)?;
    Ok(())
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let mut dim = None;
    let mut count = None;
    for field in line.split_whitespace() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| Error::parse(Location::Header, format!("expected key=value, got `{field}`")))?;
        let n: usize = value
            .parse()
            .map_err(|_| Error::parse(Location::Header, format!("`{key}` is not a count: `{value}`")))?;
        match key {
            "dim" => dim = Some(n),
            "count" => count = Some(n),
            other => return Err(Error::parse(Location::Header, format!("unknown header key `{other}`"))),
        }
    }
    match (dim, count) {
        (Some(0), _) => Err(Error::parse(Location::Header, "dim must be at least 1")),
        (Some(d), Some(c)) => Ok((d, c)),
        _ => Err(Error::parse(Location::Header, "header must be `dim=<D> count=<N>`")),
    }
}

pub fn read_text<R: Read>(reader: R) -> Result<Vec<EmbeddingRecord>> {
    let mut lines = BufReader::new(reader).lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => return Err(Error::parse(Location::Header, "empty file")),
    };
    let (dim, count) = parse_header(header.trim_end_matches('\r'))?;

    let mut records = Vec::with_capacity(count);
    let mut seen = HashSet::with_capacity(count);
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let at = || Location::Line(line_no);
        let mut parts = line.splitn(3, '\t');
        let (id, text, payload) = match (parts.next(), parts.next(), parts.next()) {
            (Some(id), Some(text), Some(payload)) => (id, text, payload),
            _ => return Err(Error::parse(at(), "expected `id<TAB>text<TAB>values`")),
        };
        if id.is_empty() {
            return Err(Error::parse(at(), "empty id"));
        }
        let values = payload
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| Error::parse(at(), format!("`{tok}` is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != dim {
            return Err(Error::parse(
                at(),
                format!("record `{id}` has {} values, header says dim={dim}", values.len()),
            ));
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::parse(at(), format!("duplicate id `{id}`")));
        }
        let vector = EmbeddingVector::new(values)
            .map_err(|e| Error::parse(at(), e.to_string()))?
            .with_source(id);
        records.push(EmbeddingRecord {
            id: id.to_string(),
            text: text.to_string(),
            vector,
        });
    }
    if records.len() != count {
        return Err(Error::parse(
            Location::Header,
            format!("header says count={count}, found {} records", records.len()),
        ));
    }
    Ok(records)
}

pub fn write_text<W: Write>(mut w: W, records: &[EmbeddingRecord]) -> Result<()> {
    let dim = common_dim(records)?;
    writeln!(w, "dim={dim} count={}", records.len())?;
    for r in records {
        check_field(&r.id, "id")?;
        check_field(&r.text, "text")?;
        write!(w, "{}\t{}\t", r.id, r.text)?;
        for (i, v) in r.vector.values().iter().enumerate() {
            if i > 0 {
                w.write_all(b" ")?;
            }
            // Display for f64 is shortest-round-trip, so reloading is exact
            write!(w, "{v}")?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn check_field(s: &str, what: &str) -> Result<()> {
    if s.contains(['\t', '\n', '\r']) {
        return Err(Error::invalid(format!("{what} `{s}` contains a tab or newline")));
    }
    Ok(())
}

fn common_dim(records: &[EmbeddingRecord]) -> Result<usize> {
    let dim = records.first().map_or(1, |r| r.vector.dim());
    for r in records {
        if r.vector.dim() != dim {
            return Err(Error::shape(format!("record `{}`", r.id), dim, r.vector.dim()));
        }
    }
    Ok(dim)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(
                Location::Offset(self.pos as u64),
                format!("truncated: needed {n} more bytes"),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self, record: usize) -> Result<String> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::parse(Location::Record(record), "invalid UTF-8"))
    }
}

pub fn read_binary<R: Read>(mut reader: R) -> Result<Vec<EmbeddingRecord>> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8)? != BINARY_MAGIC {
        return Err(Error::parse(Location::Header, "bad magic"));
    }
    let dim = cur.u32()? as usize;
    let count = cur.u32()? as usize;
    if dim == 0 {
        return Err(Error::parse(Location::Header, "dim must be at least 1"));
    }
    let mut records = Vec::with_capacity(count.min(1 << 20));
    let mut seen = HashSet::new();
    for rec in 0..count {
        let id = cur.string(rec)?;
        let text = cur.string(rec)?;
        if id.is_empty() {
            return Err(Error::parse(Location::Record(rec), "empty id"));
        }
        let payload = cur.take(4 * dim).map_err(|_| {
            Error::parse(
                Location::Record(rec),
                format!("record `{id}` payload shorter than dim={dim}"),
            )
        })?;
        let values: Vec<f64> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        if !seen.insert(id.clone()) {
            return Err(Error::parse(Location::Record(rec), format!("duplicate id `{id}`")));
        }
        let vector = EmbeddingVector::new(values)
            .map_err(|e| Error::parse(Location::Record(rec), e.to_string()))?
            .with_source(id.clone());
        records.push(EmbeddingRecord { id, text, vector });
    }
    if cur.pos != bytes.len() {
        return Err(Error::parse(
            Location::Offset(cur.pos as u64),
            format!(
                "{} trailing bytes after {count} records (dimension mismatch?)",
                bytes.len() - cur.pos
            ),
        ));
    }
    Ok(records)
}

pub fn write_binary<W: Write>(mut w: W, records: &[EmbeddingRecord]) -> Result<()> {
    let dim = common_dim(records)?;
    let as_u32 = |n: usize, what: &str| u32::try_from(n).map_err(|_| Error::invalid(format!("{what} {n} exceeds u32")));
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&as_u32(dim, "dim")?.to_le_bytes())?;
    w.write_all(&as_u32(records.len(), "count")?.to_le_bytes())?;
    for r in records {
        for s in [&r.id, &r.text] {
            w.write_all(&as_u32(s.len(), "string length")?.to_le_bytes())?;
            w.write_all(s.as_bytes())?;
        }
        for &v in r.vector.values() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, text: &str, values: Vec<f64>) -> EmbeddingRecord {
        EmbeddingRecord {
            id: id.into(),
            text: text.into(),
            vector: EmbeddingVector::new(values).unwrap().with_source(id),
        }
    }

    fn text_file(dim: usize, n: usize) -> String {
        let mut s = format!("dim={dim} count={n}\n");
        for i in 0..n {
            let vals: Vec<String> = (0..dim).map(|j| format!("{}", (i * dim + j) as f64 * 0.5)).collect();
            s.push_str(&format!("q{i}\tquestion {i}?\t{}\n", vals.join(" ")));
        }
        s
    }

    #[test]
    fn three_records_of_dim_16() {
        let recs = read_text(text_file(16, 3).as_bytes()).unwrap();
        assert_eq!(recs.len(), 3);
        assert!(recs.iter().all(|r| r.vector.dim() == 16));
        assert_eq!(recs[2].text, "question 2?");
        assert_eq!(recs[1].vector.source_id(), Some("q1"));
    }

    #[test]
    fn empty_body_with_zero_count() {
        assert!(read_text("dim=16 count=0\n".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn short_record_is_rejected_with_line_number() {
        let mut s = String::from("dim=16 count=1\nq0\tx\t");
        s.push_str(&vec!["1"; 15].join(" "));
        let err = read_text(s.as_bytes()).unwrap_err();
        match err {
            Error::Parse { location, message } => {
                assert_eq!(location, Location::Line(2));
                assert!(message.contains("15 values"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_header_and_duplicates() {
        assert!(matches!(
            read_text("dim=4\n".as_bytes()),
            Err(Error::Parse {
                location: Location::Header,
                ..
            })
        ));
        assert!(matches!(
            read_text("dimension 4\n".as_bytes()),
            Err(Error::Parse {
                location: Location::Header,
                ..
            })
        ));
        let dup = "dim=1 count=2\na\tx\t1\na\ty\t2\n";
        assert!(matches!(
            read_text(dup.as_bytes()),
            Err(Error::Parse {
                location: Location::Line(3),
                ..
            })
        ));
        let wrong_count = "dim=1 count=2\na\tx\t1\n";
        assert!(read_text(wrong_count.as_bytes()).is_err());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let recs = vec![
            record("a", "what is this?", vec![0.1, -1.0 / 3.0, 1e-300]),
            record("b", "is it red?", vec![f64::MAX, 0.0, -0.0]),
        ];
        let mut buf = Vec::new();
        write_text(&mut buf, &recs).unwrap();
        assert_eq!(read_text(&buf[..]).unwrap(), recs);
    }

    #[test]
    fn binary_round_trip_through_f32() {
        let recs = vec![
            record("a", "what is this?", vec![0.5, -0.25, 1.0]),
            record("b", "ünïcode text", vec![2.0, 0.0, -8.0]),
        ];
        let mut buf = Vec::new();
        write_binary(&mut buf, &recs).unwrap();
        assert_eq!(read_binary(&buf[..]).unwrap(), recs);
    }

    #[test]
    fn binary_rejects_dimension_mismatch() {
        let recs = vec![record("a", "x", vec![1.0, 2.0, 3.0, 4.0])];
        let mut buf = Vec::new();
        write_binary(&mut buf, &recs).unwrap();
        // claim dim=3: the reader ends up with 4 stray bytes
        buf[8..12].copy_from_slice(&3u32.to_le_bytes());
        assert!(read_binary(&buf[..]).is_err());
        // claim dim=5: payload is short
        buf[8..12].copy_from_slice(&5u32.to_le_bytes());
        assert!(read_binary(&buf[..]).is_err());
    }

    #[test]
    fn load_sniffs_format() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![record("a", "x", vec![1.0, 2.0])];
        let t = dir.path().join("e.txt");
        let b = dir.path().join("e.bin");
        save_embeddings(&t, &recs, EmbeddingFormat::Text).unwrap();
        save_embeddings(&b, &recs, EmbeddingFormat::BinaryF32).unwrap();
        assert_eq!(load_embeddings(&t).unwrap(), recs);
        assert_eq!(load_embeddings(&b).unwrap(), recs);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(EmbeddingVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(read_text("dim=1 count=1\na\tx\tinf\n".as_bytes()).is_err());
    }
}
