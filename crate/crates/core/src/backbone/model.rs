//! Model file:
//!
//! ```text
//! ZSLC-MODEL v1
//! dims <d> <h1> ... <p>
//! weights <k> <out> <in>      followed by <out> rows
//! bias <k> <out>              followed by one row
//! ...                          (repeated per layer)
//! rules <kind> <C> <p> [normalized]   followed by <C> rows `<class_id> <values>`
//! tau <value>
//! ```

use std::path::Path;

use super::extractor::FeatureExtractor;
use crate::crafting::RuleSet;
use crate::dataio::formats::{push_row, read_text, write_output, LineReader};
use crate::dataio::hexfloat::format_hex;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Trained extractor, its frozen seen rules and the softmax temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct CraftedModel {
    pub extractor: FeatureExtractor,
    pub seen_rules: RuleSet,
    pub temperature: f64,
}

impl CraftedModel {
    pub fn new(extractor: FeatureExtractor, seen_rules: RuleSet, temperature: f64) -> Result<Self> {
        if seen_rules.dim() != extractor.output_dim() {
            return Err(Error::Consistency(format!(
                "rule dim {} does not match feature dim {}",
                seen_rules.dim(),
                extractor.output_dim()
            )));
        }
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::Parameter(format!("temperature must be > 0, got {temperature}")));
        }
        Ok(Self {
            extractor,
            seen_rules,
            temperature,
        })
    }

    pub fn to_text(&self) -> String {
        let dims = self.extractor.dims();
        let mut out = String::from("ZSLC-MODEL v1\ndims");
        for d in dims {
            out.push_str(&format!(" {d}"));
        }
        out.push('\n');
        for k in 0..self.extractor.num_layers() {
            let w = self.extractor.weights(k);
            out.push_str(&format!("weights {k} {} {}\n", w.rows(), w.cols()));
            for row in w.row_iter() {
                push_row(&mut out, row);
                out.push('\n');
            }
            let b = self.extractor.bias(k);
            out.push_str(&format!("bias {k} {}\n", b.cols()));
            push_row(&mut out, b.data());
            out.push('\n');
        }
        out.push_str(&format!("rules {}\n", self.seen_rules.header_fields()));
        self.seen_rules.write_rows(&mut out);
        out.push_str(&format!("tau {}\n", format_hex(self.temperature)));
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut r = LineReader::new(text, origin);
        let (no, line) = r.next_line("a header")?;
        if line != "ZSLC-MODEL v1" {
            return Err(r.error(no, "malformed header, expected `ZSLC-MODEL v1`"));
        }
        let (no, line) = r.next_line("layer dims")?;
        let toks = r.tokens(no, line)?;
        if toks.first() != Some(&"dims") {
            return Err(r.error(no, "expected `dims ...`"));
        }
        let dims = toks[1..].iter().map(|t| r.count(no, t)).collect::<Result<Vec<_>>>()?;
        if dims.len() < 2 {
            return Err(r.error(no, "need at least two layer dims"));
        }
        let mut params = Vec::new();
        for k in 0..dims.len() - 1 {
            let (out_dim, in_dim) = (dims[k + 1], dims[k]);
            params.push(read_block(
                &mut r,
                &format!("weights {k} {out_dim} {in_dim}"),
                out_dim,
                in_dim,
            )?);
            params.push(read_block(&mut r, &format!("bias {k} {out_dim}"), 1, out_dim)?);
        }
        let extractor = FeatureExtractor::from_params(&dims, params).map_err(|e| r.error(no, e.to_string()))?;

        let (no, line) = r.next_line("a rules section")?;
        let toks = r.tokens(no, line)?;
        if toks.first() != Some(&"rules") {
            return Err(r.error(no, "expected `rules <kind> <C> <p>`"));
        }
        let seen_rules = RuleSet::read_section(&mut r, no, &toks[1..])?;

        let (no, line) = r.next_line("tau")?;
        let toks = r.tokens(no, line)?;
        if toks.len() != 2 || toks[0] != "tau" {
            return Err(r.error(no, "expected `tau <value>`"));
        }
        let temperature = r.number(no, toks[1])?;
        r.finish()?;
        CraftedModel::new(extractor, seen_rules, temperature).map_err(|e| r.error(no, e.to_string()))
    }

    pub fn save(&self, path: &Path, force: bool) -> Result<()> {
        write_output(path, &self.to_text(), force)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, &path.display().to_string())
    }
}

fn read_block(r: &mut LineReader<'_>, header: &str, rows: usize, cols: usize) -> Result<DenseMatrix> {
    let (no, line) = r.next_line(header)?;
    if line != header {
        return Err(r.error(no, format!("expected `{header}`")));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let (no, line) = r.next_line("a parameter row")?;
        let toks = r.tokens(no, line)?;
        if toks.len() != cols {
            return Err(r.error(no, format!("row has {} values, expected {cols}", toks.len())));
        }
        for t in toks {
            data.push(r.number(no, t)?);
        }
    }
    DenseMatrix::new(rows, cols, data)
}
