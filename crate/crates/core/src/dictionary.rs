//! The basic-question dictionary: one unit-norm column per distinct
//! corpus question, with ids, texts and the pre-normalization norms kept
//! alongside.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingRecord;
use crate::error::{Error, Location, Result};
use crate::linalg::{norm2, Matrix};

/// A corpus question: id, text, embedding.
pub type QuestionRecord = EmbeddingRecord;

pub const CACHE_MAGIC: &[u8; 8] = b"BQDICT\0\0";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DedupMode {
    /// Trim, collapse whitespace runs, compare case-insensitively.
    #[default]
    Normalized,
    /// Byte equality.
    Exact,
}

impl DedupMode {
    pub fn key(self, text: &str) -> String {
        match self {
            DedupMode::Exact => text.to_string(),
            DedupMode::Normalized => normalize_text(text).to_lowercase(),
        }
    }
}

/// Trims and collapses internal whitespace runs to single spaces.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    matrix: Matrix,
    ids: Vec<String>,
    texts: Vec<String>,
    column_norms_original: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BuildSummary {
    pub input_records: usize,
    pub columns: usize,
    pub duplicates_removed: usize,
    pub dim: usize,
}

impl Dictionary {
    pub fn build(records: &[QuestionRecord], mode: DedupMode) -> Result<(Self, BuildSummary)> {
        let first = records
            .first()
            .ok_or_else(|| Error::invalid("cannot build a dictionary from zero records"))?;
        let dim = first.vector.dim();

        let mut seen_keys = HashSet::with_capacity(records.len());
        let mut seen_ids = HashSet::with_capacity(records.len());
        let mut data = Vec::with_capacity(dim * records.len());
        let mut ids = Vec::new();
        let mut texts = Vec::new();
        let mut norms = Vec::new();

        for rec in records {
            if rec.id.is_empty() {
                return Err(Error::invalid("record with empty id"));
            }
            if normalize_text(&rec.text).is_empty() {
                return Err(Error::invalid(format!("record `{}` has empty text", rec.id)));
            }
            if rec.vector.dim() != dim {
                return Err(Error::shape(format!("record `{}`", rec.id), dim, rec.vector.dim()));
            }
            if !seen_ids.insert(rec.id.as_str()) {
                return Err(Error::invalid(format!("duplicate id `{}`", rec.id)));
            }
            if !seen_keys.insert(mode.key(&rec.text)) {
                continue;
            }
            let norm = norm2(rec.vector.values());
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::invalid(format!("record `{}` has zero-norm vector", rec.id)));
            }
            data.extend(rec.vector.values().iter().map(|v| v / norm));
            ids.push(rec.id.clone());
            texts.push(rec.text.clone());
            norms.push(norm);
        }

        let columns = ids.len();
        let dict = Dictionary {
            matrix: Matrix::from_col_major(dim, columns, data)?,
            ids,
            texts,
            column_norms_original: norms,
        };
        let summary = BuildSummary {
            input_records: records.len(),
            columns,
            duplicates_removed: records.len() - columns,
            dim,
        };
        Ok((dict, summary))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn n_columns(&self) -> usize {
        self.matrix.cols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    pub fn column_norms_original(&self) -> &[f64] {
        &self.column_norms_original
    }

    pub fn column(&self, j: usize) -> &[f64] {
        self.matrix.col(j)
    }

    pub fn lookup(&self, index: usize) -> Result<(&str, &str, &[f64])> {
        if index >= self.n_columns() {
            return Err(Error::Range {
                index,
                len: self.n_columns(),
            });
        }
        Ok((&self.ids[index], &self.texts[index], self.matrix.col(index)))
    }

    /// Columns whose text matches `text` under `mode`.
    pub fn find_text(&self, text: &str, mode: DedupMode) -> Vec<usize> {
        let key = mode.key(text);
        self.texts
            .iter()
            .enumerate()
            .filter(|(_, t)| mode.key(t) == key)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn save_cache(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::with_capacity(32 + 8 * self.matrix.as_col_major().len());
        self.write_cache(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn write_cache<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        w.write_all(&(self.n_columns() as u64).to_le_bytes())?;
        for s in self.ids.iter().chain(&self.texts) {
            let len = u32::try_from(s.len()).map_err(|_| Error::invalid("string longer than u32"))?;
            w.write_all(&len.to_le_bytes())?;
            w.write_all(s.as_bytes())?;
        }
        for v in self.column_norms_original.iter().chain(self.matrix.as_col_major()) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load_cache(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_cache(&fs::read(path)?)
    }

    pub fn read_cache(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if bytes.len() - pos < n {
                return Err(Error::parse(Location::Offset(pos as u64), "truncated dictionary cache"));
            }
            let out = &bytes[pos..pos + n];
            pos += n;
            Ok(out)
        };
        if take(8)? != CACHE_MAGIC {
            return Err(Error::parse(Location::Header, "not a dictionary cache (bad magic)"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
        if version != CACHE_VERSION {
            return Err(Error::parse(
                Location::Header,
                format!("unsupported cache version {version}"),
            ));
        }
        let dim = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        if dim == 0 || n == 0 {
            return Err(Error::parse(Location::Header, "empty dictionary in cache"));
        }

        let mut strings = Vec::with_capacity(2 * n);
        for i in 0..2 * n {
            let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            let s = String::from_utf8(take(len)?.to_vec())
                .map_err(|_| Error::parse(Location::Record(i % n), "invalid UTF-8"))?;
            strings.push(s);
        }
        let texts = strings.split_off(n);
        let ids = strings;

        let mut floats = |count: usize| -> Result<Vec<f64>> {
            let raw = take(
                count
                    .checked_mul(8)
                    .ok_or_else(|| Error::parse(Location::Header, "cache dimensions overflow"))?,
            )?;
            Ok(raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect())
        };
        let norms = floats(n)?;
        let data = floats(dim * n)?;
        if pos != bytes.len() {
            return Err(Error::parse(Location::Offset(pos as u64), "trailing bytes in cache"));
        }
        Ok(Dictionary {
            matrix: Matrix::from_col_major(dim, n, data)?,
            ids,
            texts,
            column_norms_original: norms,
        })
    }
}

/// Convenience wrapper matching the common call shape.
pub fn build_dictionary(records: &[QuestionRecord]) -> Result<Dictionary> {
    Dictionary::build(records, DedupMode::Normalized).map(|(d, _)| d)
}
