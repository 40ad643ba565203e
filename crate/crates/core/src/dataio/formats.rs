//! Text file formats. All numbers are written as hex float literals so a
//! save/load round trip is value-identical.
//!
//! ```text
//! ZSLC-FEAT v1 <n> <d>          then n lines: <label> <d values>
//! ZSLC-EMB v1 <C> <q>           then C lines: <class_id> <q values>
//! ZSLC-SPLIT v1                 then `seen:`, `unseen:`, `train:`, `test:` lines
//! ```
//!
//! Unlabeled feature files use the FEAT layout with every label written as `-1`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use super::hexfloat::{format_hex, parse_hex};
use super::{ClassEmbeddingTable, Split};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Line cursor that produces errors carrying the origin and 1-based line number.
pub(crate) struct LineReader<'a> {
    origin: String,
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> LineReader<'a> {
    pub(crate) fn new(text: &'a str, origin: impl Into<String>) -> Self {
        let mut lines: Vec<&str> = text.split('\n').collect();
        if lines.last() == Some(&"") {
            lines.pop();
        }
        Self {
            origin: origin.into(),
            lines,
            pos: 0,
        }
    }

    pub(crate) fn error(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.origin.clone(),
            line,
            msg: msg.into(),
        }
    }

    /// Next line and its number.
    pub(crate) fn next_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let line = self
            .lines
            .get(self.pos)
            .copied()
            .ok_or_else(|| self.error(self.pos + 1, format!("unexpected end of file, expected {what}")))?;
        self.pos += 1;
        Ok((self.pos, line))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        match self.lines.get(self.pos) {
            None => Ok(()),
            Some(_) => Err(self.error(self.pos + 1, "unexpected trailing content")),
        }
    }

    pub(crate) fn tokens(&self, line_no: usize, line: &'a str) -> Result<Vec<&'a str>> {
        if line.is_empty() {
            return Ok(Vec::new());
        }
        let toks: Vec<&str> = line.split(' ').collect();
        if toks.iter().any(|t| t.is_empty()) {
            return Err(self.error(line_no, "fields must be separated by single spaces"));
        }
        Ok(toks)
    }

    pub(crate) fn number(&self, line_no: usize, tok: &str) -> Result<f64> {
        parse_hex(tok).map_err(|e| self.error(line_no, e))
    }

    pub(crate) fn count(&self, line_no: usize, tok: &str) -> Result<usize> {
        tok.parse()
            .map_err(|_| self.error(line_no, format!("expected a non-negative integer, got {tok:?}")))
    }

    /// Parse `expected_n` rows of `<key> <cols values>`.
    fn keyed_rows(
        &mut self,
        n: usize,
        cols: usize,
        mut key: impl FnMut(&Self, usize, &str) -> Result<()>,
    ) -> Result<Vec<f64>> {
        let mut data = Vec::with_capacity(n * cols);
        for _ in 0..n {
            let (no, line) = self.next_line("a data row")?;
            let toks = self.tokens(no, line)?;
            if toks.len() != cols + 1 {
                return Err(self.error(
                    no,
                    format!(
                        "row has {} values, header declares {cols}",
                        toks.len().saturating_sub(1)
                    ),
                ));
            }
            key(self, no, toks[0])?;
            for t in &toks[1..] {
                data.push(self.number(no, t)?);
            }
        }
        Ok(data)
    }
}

/// Write `contents` to `path`, refusing to replace an existing file unless `force`.
pub fn write_output(path: &Path, contents: &str, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Exists(path.to_path_buf()));
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn push_row(out: &mut String, row: &[f64]) {
    for (i, &x) in row.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&format_hex(x));
    }
}

fn parse_header<'a>(reader: &mut LineReader<'a>, magic: &str, n_fields: usize) -> Result<(usize, Vec<&'a str>)> {
    let (no, line) = reader.next_line("a header")?;
    let toks = reader.tokens(no, line)?;
    if toks.len() < 2 || toks[0] != magic || toks[1] != "v1" {
        return Err(reader.error(no, format!("malformed header, expected `{magic} v1 ...`")));
    }
    if toks.len() != 2 + n_fields {
        return Err(reader.error(
            no,
            format!("malformed header, expected {n_fields} fields after version"),
        ));
    }
    Ok((no, toks[2..].to_vec()))
}

fn format_feature_rows(features: &DenseMatrix, label: impl Fn(usize) -> String) -> String {
    let mut out = format!("ZSLC-FEAT v1 {} {}\n", features.rows(), features.cols());
    for i in 0..features.rows() {
        out.push_str(&label(i));
        if features.cols() > 0 {
            out.push(' ');
        }
        push_row(&mut out, features.row(i));
        out.push('\n');
    }
    out
}

pub fn format_features(features: &DenseMatrix, labels: &[usize]) -> Result<String> {
    if labels.len() != features.rows() {
        return Err(Error::shape(
            "format_features",
            format!("{} labels for {} rows", labels.len(), features.rows()),
        ));
    }
    Ok(format_feature_rows(features, |i| labels[i].to_string()))
}

fn parse_feature_file(text: &str, origin: &str, labeled: bool) -> Result<(DenseMatrix, Vec<usize>)> {
    let mut r = LineReader::new(text, origin);
    let (no, h) = parse_header(&mut r, "ZSLC-FEAT", 2)?;
    let n = r.count(no, h[0])?;
    let d = r.count(no, h[1])?;
    let mut labels = Vec::with_capacity(n);
    let data = r.keyed_rows(n, d, |r, no, tok| {
        if labeled {
            labels.push(r.count(no, tok)?);
        } else if tok != "-1" {
            return Err(r.error(no, format!("unlabeled file expects label -1, got {tok:?}")));
        }
        Ok(())
    })?;
    r.finish()?;
    Ok((DenseMatrix::from_raw(n, d, data), labels))
}

pub fn parse_features(text: &str, origin: &str) -> Result<(DenseMatrix, Vec<usize>)> {
    parse_feature_file(text, origin, true)
}

pub fn save_features(path: &Path, features: &DenseMatrix, labels: &[usize], force: bool) -> Result<()> {
    write_output(path, &format_features(features, labels)?, force)
}

pub fn load_features(path: &Path) -> Result<(DenseMatrix, Vec<usize>)> {
    parse_features(&read_text(path)?, &path.display().to_string())
}

pub fn save_unlabeled(path: &Path, features: &DenseMatrix, force: bool) -> Result<()> {
    write_output(path, &format_feature_rows(features, |_| "-1".to_string()), force)
}

pub fn load_unlabeled(path: &Path) -> Result<DenseMatrix> {
    Ok(parse_feature_file(&read_text(path)?, &path.display().to_string(), false)?.0)
}

pub fn format_embeddings(table: &ClassEmbeddingTable) -> String {
    let e = table.embeddings();
    let mut out = format!("ZSLC-EMB v1 {} {}\n", e.rows(), e.cols());
    for (i, id) in table.class_ids().iter().enumerate() {
        out.push_str(&id.to_string());
        out.push(' ');
        push_row(&mut out, e.row(i));
        out.push('\n');
    }
    out
}

pub fn parse_embeddings(text: &str, origin: &str) -> Result<ClassEmbeddingTable> {
    let mut r = LineReader::new(text, origin);
    let (no, h) = parse_header(&mut r, "ZSLC-EMB", 2)?;
    let c = r.count(no, h[0])?;
    let q = r.count(no, h[1])?;
    let mut ids = Vec::with_capacity(c);
    let mut seen = BTreeSet::new();
    let data = r.keyed_rows(c, q, |r, no, tok| {
        let id = r.count(no, tok)?;
        if !seen.insert(id) {
            return Err(r.error(no, format!("duplicate class id {id}")));
        }
        ids.push(id);
        Ok(())
    })?;
    r.finish()?;
    ClassEmbeddingTable::new(DenseMatrix::from_raw(c, q, data), ids).map_err(|e| Error::Parse {
        path: origin.to_string(),
        line: 1,
        msg: e.to_string(),
    })
}

pub fn save_embeddings(path: &Path, table: &ClassEmbeddingTable, force: bool) -> Result<()> {
    write_output(path, &format_embeddings(table), force)
}

pub fn load_embeddings(path: &Path) -> Result<ClassEmbeddingTable> {
    parse_embeddings(&read_text(path)?, &path.display().to_string())
}

pub fn format_split(split: &Split) -> String {
    let list = |name: &str, v: &[usize]| {
        let mut s = format!("{name}:");
        for x in v {
            s.push(' ');
            s.push_str(&x.to_string());
        }
        s.push('\n');
        s
    };
    let mut out = String::from("ZSLC-SPLIT v1\n");
    out += &list("seen", &split.seen);
    out += &list("unseen", &split.unseen);
    out += &list("train", &split.train);
    out += &list("test", &split.test);
    out
}

pub fn parse_split(text: &str, origin: &str) -> Result<Split> {
    let mut r = LineReader::new(text, origin);
    let (no, line) = r.next_line("a header")?;
    if line != "ZSLC-SPLIT v1" {
        return Err(r.error(no, "malformed header, expected `ZSLC-SPLIT v1`"));
    }
    let mut lists = Vec::with_capacity(4);
    for name in ["seen", "unseen", "train", "test"] {
        let (no, line) = r.next_line(name)?;
        let rest = line
            .strip_prefix(name)
            .and_then(|s| s.strip_prefix(':'))
            .ok_or_else(|| r.error(no, format!("expected `{name}:` line")))?;
        let rest = rest.strip_prefix(' ').unwrap_or(rest);
        let ids = r
            .tokens(no, rest)?
            .into_iter()
            .map(|t| r.count(no, t))
            .collect::<Result<Vec<_>>>()?;
        lists.push(ids);
    }
    r.finish()?;
    let test = lists.pop().unwrap_or_default();
    let train = lists.pop().unwrap_or_default();
    let unseen = lists.pop().unwrap_or_default();
    let seen = lists.pop().unwrap_or_default();
    Ok(Split {
        seen,
        unseen,
        train,
        test,
    })
}

pub fn save_split(path: &Path, split: &Split, force: bool) -> Result<()> {
    write_output(path, &format_split(split), force)
}

pub fn load_split(path: &Path) -> Result<Split> {
    parse_split(&read_text(path)?, &path.display().to_string())
}
