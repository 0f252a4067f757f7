//! Named matrix sections, the on-disk form for model parameters.
//!
//! ```text
//! sections=<K>
//! name=<NAME> rows=<R> cols=<C>
//! <R lines of C whitespace-separated values>
//! ...
//! ```
//!
//! Values use shortest round-trip formatting so save/load is exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Location, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamFile {
    sections: Vec<(String, Matrix)>,
}

impl ParamFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, m: Matrix) {
        let name = name.into();
        match self.sections.iter_mut().find(|(n, _)| *n == name) {
            Some((_, slot)) => *slot = m,
            None => self.sections.push((name, m)),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::parse(Location::Section(name.to_string()), "missing section"))
    }

    /// A section that must be a vector (either orientation).
    pub fn get_vector(&self, name: &str) -> Result<Vec<f64>> {
        let m = self.get(name)?;
        if m.rows() != 1 && m.cols() != 1 {
            return Err(Error::parse(
                Location::Section(name.to_string()),
                format!("expected a vector, found {}x{}", m.rows(), m.cols()),
            ));
        }
        Ok(m.as_col_major().to_vec())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.sections.iter().map(|(n, _)| n.as_str())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "sections={}", self.sections.len())?;
        for (name, m) in &self.sections {
            writeln!(w, "name={name} rows={} cols={}", m.rows(), m.cols())?;
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    if j > 0 {
                        w.write_all(b" ")?;
                    }
                    write!(w, "{}", m.get(i, j))?;
                }
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    pub fn parse(src: &str) -> Result<Self> {
        let mut lines = src
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());

        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(Location::Header, "empty parameter file"))?;
        let count: usize = header
            .strip_prefix("sections=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::parse(Location::Header, "header must be `sections=<K>`"))?;

        let mut out = ParamFile::new();
        for _ in 0..count {
            let (line_no, head) = lines
                .next()
                .ok_or_else(|| Error::parse(Location::Header, format!("expected {count} sections")))?;
            let (name, rows, cols) = parse_section_header(head).ok_or_else(|| {
                Error::parse(
                    Location::Line(line_no),
                    "section header must be `name=<NAME> rows=<R> cols=<C>`",
                )
            })?;
            if out.sections.iter().any(|(n, _)| *n == name) {
                return Err(Error::parse(
                    Location::Line(line_no),
                    format!("duplicate section `{name}`"),
                ));
            }
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (row_no, row) = lines
                    .next()
                    .ok_or_else(|| Error::parse(Location::Section(name.clone()), format!("expected {rows} rows")))?;
                let before = data.len();
                for tok in row.split_whitespace() {
                    let v: f64 = tok
                        .parse()
                        .map_err(|_| Error::parse(Location::Line(row_no), format!("`{tok}` is not a number")))?;
                    if !v.is_finite() {
                        return Err(Error::parse(Location::Line(row_no), "non-finite value"));
                    }
                    data.push(v);
                }
                if data.len() - before != cols {
                    return Err(Error::parse(
                        Location::Line(row_no),
                        format!(
                            "row has {} values, section `{name}` says cols={cols}",
                            data.len() - before
                        ),
                    ));
                }
            }
            out.sections.push((name, Matrix::from_row_major(rows, cols, &data)?));
        }
        if let Some((line_no, _)) = lines.next() {
            return Err(Error::parse(
                Location::Line(line_no),
                "trailing content after last section",
            ));
        }
        Ok(out)
    }
}

fn parse_section_header(line: &str) -> Option<(String, usize, usize)> {
    let mut name = None;
    let mut rows = None;
    let mut cols = None;
    for field in line.split_whitespace() {
        let (k, v) = field.split_once('=')?;
        match k {
            "name" if !v.is_empty() => name = Some(v.to_string()),
            "rows" => rows = v.parse().ok(),
            "cols" => cols = v.parse().ok(),
            _ => return None,
        }
    }
    Some((name?, rows?, cols?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_is_exact() {
        let mut p = ParamFile::new();
        p.insert(
            "w",
            Matrix::from_row_major(2, 3, &[0.1, 0.2, 1.0 / 3.0, -4.0, 5e-310, 6.0]).unwrap(),
        );
        p.insert("v", Matrix::from_row_major(1, 2, &[1.5, -2.5]).unwrap());
        let mut buf = Vec::new();
        p.write(&mut buf).unwrap();
        let q = ParamFile::parse(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(p, q);
        assert_eq!(q.get_vector("v").unwrap(), vec![1.5, -2.5]);
        assert_eq!(q.names().collect::<Vec<_>>(), vec!["w", "v"]);
    }

    #[test]
    fn rejects_bad_rows_and_missing_sections() {
        let src = "sections=1\nname=w rows=2 cols=2\n1 2\n3\n";
        let err = ParamFile::parse(src).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Parse {
                    location: Location::Line(4),
                    ..
                }
            ),
            "{err}"
        );

        let p = ParamFile::parse("sections=0\n").unwrap();
        assert!(p.get("w").is_err());
        assert!(ParamFile::parse("sections=2\nname=a rows=1 cols=1\n1\n").is_err());
        assert!(ParamFile::parse("sections=1\nname=a rows=1 cols=1\n1\n2\n").is_err());
    }
}
