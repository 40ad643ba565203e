//! Fixed classification rules.
//!
//! Semantic rules are the class embeddings themselves. Visual rules are feature
//! prototypes: seen prototypes are class means of training features, unseen ones
//! come from a ridge-regression map from embeddings to prototypes, fitted on seen
//! classes only.

use std::collections::BTreeSet;
use std::fmt;

use crate::dataio::hexfloat::format_hex;
use crate::dataio::{formats, ClassEmbeddingTable};
use crate::error::{Error, Result};
use crate::linalg::{l2_norm, solve_spd, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    Semantic,
    Visual,
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RuleKind::Semantic => "semantic",
            RuleKind::Visual => "visual",
        })
    }
}

impl std::str::FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "semantic" => Ok(RuleKind::Semantic),
            "visual" => Ok(RuleKind::Visual),
            other => Err(Error::Config(format!("unknown rule kind {other:?}"))),
        }
    }
}

/// Ordered fixed classification rules, one row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet {
    rules: DenseMatrix,
    class_ids: Vec<usize>,
    kind: RuleKind,
    normalized: bool,
}

const UNIT_NORM_TOL: f64 = 1e-9;

impl RuleSet {
    pub fn new(rules: DenseMatrix, class_ids: Vec<usize>, kind: RuleKind, normalized: bool) -> Result<Self> {
        if rules.rows() != class_ids.len() {
            return Err(Error::Invalid(format!(
                "{} rule rows for {} class ids",
                rules.rows(),
                class_ids.len()
            )));
        }
        let mut ids = BTreeSet::new();
        if let Some(dup) = class_ids.iter().find(|&&c| !ids.insert(c)) {
            return Err(Error::Invalid(format!("duplicate class id {dup} in rule set")));
        }
        for (i, row) in rules.row_iter().enumerate() {
            if row.iter().all(|&x| x == 0.0) {
                return Err(Error::Invalid(format!("class {} has an all-zero rule", class_ids[i])));
            }
            if normalized && (l2_norm(row) - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Invalid(format!("class {} rule is not unit norm", class_ids[i])));
            }
        }
        Ok(Self {
            rules,
            class_ids,
            kind,
            normalized,
        })
    }

    pub fn rules(&self) -> &DenseMatrix {
        &self.rules
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn kind(&self) -> RuleKind {
        self.kind
    }

    pub fn normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    /// Dimension of each rule vector (must equal the feature dimension).
    pub fn dim(&self) -> usize {
        self.rules.cols()
    }

    pub fn position(&self, class: usize) -> Option<usize> {
        self.class_ids.iter().position(|&c| c == class)
    }

    /// The rules of `classes`, in that order.
    pub fn subset(&self, classes: &[usize]) -> Result<RuleSet> {
        let idx = classes
            .iter()
            .map(|&c| self.position(c).ok_or(Error::UnknownClass(c)))
            .collect::<Result<Vec<_>>>()?;
        RuleSet::new(
            self.rules.select_rows(&idx),
            classes.to_vec(),
            self.kind,
            self.normalized,
        )
    }

    /// Bit-level equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &RuleSet) -> bool {
        self.kind == other.kind
            && self.normalized == other.normalized
            && self.class_ids == other.class_ids
            && self.rules.shape() == other.rules.shape()
            && self
                .rules
                .data()
                .iter()
                .zip(other.rules.data())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = Fingerprint::default();
        h.write_str(&self.kind.to_string());
        h.write_u64(u64::from(self.normalized));
        for &c in &self.class_ids {
            h.write_u64(c as u64);
        }
        h.write_matrix(&self.rules);
        h.finish()
    }

    /// Text body lines (one per class), shared by the rules and model file formats.
    pub(crate) fn write_rows(&self, out: &mut String) {
        for (i, id) in self.class_ids.iter().enumerate() {
            out.push_str(&id.to_string());
            out.push(' ');
            formats::push_row(out, self.rules.row(i));
            out.push('\n');
        }
    }

    pub(crate) fn header_fields(&self) -> String {
        let mut s = format!("{} {} {}", self.kind, self.len(), self.dim());
        if self.normalized {
            s.push_str(" normalized");
        }
        s
    }

    /// Parse `<kind> <C> <p> [normalized]` followed by `C` rows.
    pub(crate) fn read_section(r: &mut formats::LineReader<'_>, header_no: usize, fields: &[&str]) -> Result<RuleSet> {
        if !(3..=4).contains(&fields.len()) || (fields.len() == 4 && fields[3] != "normalized") {
            return Err(r.error(header_no, "expected `<kind> <C> <p> [normalized]`"));
        }
        let kind: RuleKind = fields[0]
            .parse()
            .map_err(|_| r.error(header_no, format!("unknown rule kind {:?}", fields[0])))?;
        let c = r.count(header_no, fields[1])?;
        let p = r.count(header_no, fields[2])?;
        let normalized = fields.len() == 4;
        let mut ids = Vec::with_capacity(c);
        let mut data = Vec::with_capacity(c * p);
        for _ in 0..c {
            let (no, line) = r.next_line("a rule row")?;
            let toks = r.tokens(no, line)?;
            if toks.len() != p + 1 {
                return Err(r.error(
                    no,
                    format!("rule row has {} values, expected {p}", toks.len().saturating_sub(1)),
                ));
            }
            ids.push(r.count(no, toks[0])?);
            for t in &toks[1..] {
                data.push(r.number(no, t)?);
            }
        }
        RuleSet::new(DenseMatrix::from_raw(c, p, data), ids, kind, normalized)
            .map_err(|e| r.error(header_no, e.to_string()))
    }
}

/// FNV-1a over raw bits; stable across platforms and releases.
#[derive(Debug, Clone)]
pub struct Fingerprint(u64);

impl Default for Fingerprint {
    fn default() -> Self {
        Fingerprint(0xcbf2_9ce4_8422_2325)
    }
}

impl Fingerprint {
    pub fn write_u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn write_str(&mut self, s: &str) {
        for b in s.bytes() {
            self.write_u64(u64::from(b));
        }
    }

    pub fn write_matrix(&mut self, m: &DenseMatrix) {
        self.write_u64(m.rows() as u64);
        self.write_u64(m.cols() as u64);
        for x in m.data() {
            self.write_u64(x.to_bits());
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

pub fn format_rules(rules: &RuleSet) -> String {
    let mut out = format!("ZSLC-RULES v1 {}\n", rules.header_fields());
    rules.write_rows(&mut out);
    out
}

pub fn parse_rules(text: &str, origin: &str) -> Result<RuleSet> {
    let mut r = formats::LineReader::new(text, origin);
    let (no, line) = r.next_line("a header")?;
    let toks = r.tokens(no, line)?;
    if toks.len() < 2 || toks[0] != "ZSLC-RULES" || toks[1] != "v1" {
        return Err(r.error(no, "malformed header, expected `ZSLC-RULES v1 ...`"));
    }
    let rules = RuleSet::read_section(&mut r, no, &toks[2..])?;
    r.finish()?;
    Ok(rules)
}

pub fn save_rules(path: &std::path::Path, rules: &RuleSet, force: bool) -> Result<()> {
    formats::write_output(path, &format_rules(rules), force)
}

pub fn load_rules(path: &std::path::Path) -> Result<RuleSet> {
    parse_rules(&formats::read_text(path)?, &path.display().to_string())
}

fn normalize_rows(m: &DenseMatrix) -> Result<DenseMatrix> {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let n = l2_norm(row);
        if n == 0.0 {
            return Err(Error::Invalid(format!("cannot normalize all-zero row {i}")));
        }
        row.iter_mut().for_each(|x| *x /= n);
    }
    Ok(out)
}

/// Semantic rules: the class embeddings of `classes`, optionally L2-normalized.
pub fn semantic_rules(table: &ClassEmbeddingTable, classes: &[usize], normalize: bool) -> Result<RuleSet> {
    let rows = table.rows_for(classes)?;
    let rows = if normalize { normalize_rows(&rows)? } else { rows };
    RuleSet::new(rows, classes.to_vec(), RuleKind::Semantic, normalize)
}

/// Class-mean feature vectors, one row per class in `seen_classes`.
pub fn seen_prototypes(features: &DenseMatrix, labels: &[usize], seen_classes: &[usize]) -> Result<DenseMatrix> {
    if labels.len() != features.rows() {
        return Err(Error::shape(
            "seen_prototypes",
            format!("{} labels for {} rows", labels.len(), features.rows()),
        ));
    }
    let p = features.cols();
    let mut out = Vec::with_capacity(seen_classes.len() * p);
    for &c in seen_classes {
        let mut sum = vec![0.0; p];
        let mut count = 0usize;
        for (row, _) in features.row_iter().zip(labels).filter(|(_, &l)| l == c) {
            sum.iter_mut().zip(row).for_each(|(s, x)| *s += x);
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptyClass(c));
        }
        out.extend(sum.into_iter().map(|s| s / count as f64));
    }
    DenseMatrix::new(seen_classes.len(), p, out)
}

/// Ridge map `W = argmin ‖S·W − M‖² + λ‖W‖²`, from the normal equations
/// `(SᵀS + λI)·W = SᵀM`.
pub fn fit_projection(
    seen_embeddings: &DenseMatrix,
    seen_prototypes: &DenseMatrix,
    lambda: f64,
) -> Result<DenseMatrix> {
    let (cs, q) = seen_embeddings.shape();
    if seen_prototypes.rows() != cs {
        return Err(Error::shape(
            "fit_projection",
            format!("{cs} embedding rows vs {} prototype rows", seen_prototypes.rows()),
        ));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Parameter(format!(
            "ridge coefficient must be >= 0, got {lambda}"
        )));
    }
    if lambda == 0.0 && q > cs {
        // SᵀS has rank at most C_s < q
        return Err(Error::SingularProjection { pivot: cs });
    }
    let st = seen_embeddings.transpose();
    let gram = st
        .matmul(seen_embeddings)?
        .add(&DenseMatrix::identity(q).scale(lambda)?)?;
    let rhs = st.matmul(seen_prototypes)?;
    solve_spd(&gram, &rhs).map_err(|e| match e {
        Error::Singular { pivot } => Error::SingularProjection { pivot },
        other => other,
    })
}

/// Predicted prototypes `S̃·W`. Takes class embeddings only, never features.
pub fn unseen_prototypes(projection: &DenseMatrix, unseen_embeddings: &DenseMatrix) -> Result<DenseMatrix> {
    unseen_embeddings.matmul(projection)
}

/// Pick the ridge coefficient from `grid` by k-fold cross-validation over seen classes,
/// minimizing squared prototype-prediction error on held-out classes. Ties keep the
/// earlier grid entry.
pub fn cross_validate_lambda(
    seen_embeddings: &DenseMatrix,
    seen_prototypes: &DenseMatrix,
    grid: &[f64],
    folds: usize,
) -> Result<f64> {
    let cs = seen_embeddings.rows();
    if grid.is_empty() || folds < 2 || cs < folds {
        return Err(Error::Parameter(format!(
            "cross-validation needs a non-empty grid and 2 <= folds <= {cs}"
        )));
    }
    let mut best = (f64::INFINITY, grid[0]);
    for &lambda in grid {
        let mut err = 0.0;
        for k in 0..folds {
            let held: Vec<usize> = (0..cs).filter(|i| i % folds == k).collect();
            let kept: Vec<usize> = (0..cs).filter(|i| i % folds != k).collect();
            let w = match fit_projection(
                &seen_embeddings.select_rows(&kept),
                &seen_prototypes.select_rows(&kept),
                lambda,
            ) {
                Ok(w) => w,
                Err(Error::SingularProjection { .. }) => {
                    err = f64::INFINITY;
                    break;
                }
                Err(e) => return Err(e),
            };
            let pred = seen_embeddings.select_rows(&held).matmul(&w)?;
            let diff = pred.sub(&seen_prototypes.select_rows(&held))?;
            err += diff.data().iter().map(|x| x * x).sum::<f64>();
        }
        if err < best.0 {
            best = (err, lambda);
        }
    }
    Ok(best.1)
}

/// Assemble visual rules: seen prototypes followed by (possibly zero) unseen ones.
pub fn visual_rules(seen: &DenseMatrix, unseen: &DenseMatrix, class_ids: &[usize], normalize: bool) -> Result<RuleSet> {
    let rows = if unseen.rows() == 0 {
        seen.clone()
    } else {
        seen.vstack(unseen)?
    };
    let rows = if normalize { normalize_rows(&rows)? } else { rows };
    RuleSet::new(rows, class_ids.to_vec(), RuleKind::Visual, normalize)
}

/// Hex rendering of a rule row, for diagnostics.
pub fn describe_row(row: &[f64]) -> String {
    row.iter().map(|&x| format_hex(x)).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{rand_normal, SeededRng};
    use proptest::prelude::*;

    fn table() -> ClassEmbeddingTable {
        ClassEmbeddingTable::new(
            DenseMatrix::from_rows(&[[3.0, 4.0], [1.0, 0.0], [0.5, 0.5]]).unwrap(),
            vec![10, 11, 12],
        )
        .unwrap()
    }

    #[test]
    fn semantic_normalized_three_four_five() {
        let r = semantic_rules(&table(), &[10], true).unwrap();
        assert!((r.rules().get(0, 0) - 0.6).abs() < 1e-15);
        assert!((r.rules().get(0, 1) - 0.8).abs() < 1e-15);
        assert!(r.normalized());
    }

    #[test]
    fn semantic_raw_is_bit_equal() {
        let r = semantic_rules(&table(), &[10, 11, 12], false).unwrap();
        assert_eq!(r.rules(), table().embeddings());
        assert_eq!(r.kind(), RuleKind::Semantic);
    }

    #[test]
    fn semantic_unseen_block() {
        let all = semantic_rules(&table(), &[10, 11, 12], false).unwrap();
        let unseen = semantic_rules(&table(), &[12], false).unwrap();
        assert_eq!(unseen, all.subset(&[12]).unwrap());
        assert!(matches!(
            semantic_rules(&table(), &[99], false),
            Err(Error::UnknownClass(99))
        ));
    }

    #[test]
    fn prototypes_are_means() {
        let f = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [9.0, 9.0]]).unwrap();
        let p = seen_prototypes(&f, &[0, 0, 1], &[0, 1]).unwrap();
        assert_eq!(p.data(), &[2.0, 3.0, 9.0, 9.0]);
        let shuffled = DenseMatrix::from_rows(&[[9.0, 9.0], [3.0, 4.0], [1.0, 2.0]]).unwrap();
        assert_eq!(seen_prototypes(&shuffled, &[1, 0, 0], &[0, 1]).unwrap(), p);
        assert!(matches!(
            seen_prototypes(&f, &[0, 0, 1], &[0, 5]),
            Err(Error::EmptyClass(5))
        ));
    }

    #[test]
    fn identity_design_projection() {
        let m = rand_normal(&mut SeededRng::new(2), 4, 3, 0.0, 1.0).unwrap();
        let w = fit_projection(&DenseMatrix::identity(4), &m, 0.0).unwrap();
        assert!(w.sub(&m).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn heavy_ridge_shrinks_to_zero() {
        let mut rng = SeededRng::new(3);
        let s = rand_normal(&mut rng, 10, 4, 0.0, 1.0).unwrap();
        let m = rand_normal(&mut rng, 10, 6, 0.0, 1.0).unwrap();
        let w = fit_projection(&s, &m, 1e9).unwrap();
        assert!(w.max_abs() <= 1e-6);
    }

    #[test]
    fn underdetermined_needs_ridge() {
        let mut rng = SeededRng::new(4);
        let s = rand_normal(&mut rng, 3, 5, 0.0, 1.0).unwrap();
        let m = rand_normal(&mut rng, 3, 2, 0.0, 1.0).unwrap();
        assert!(matches!(
            fit_projection(&s, &m, 0.0),
            Err(Error::SingularProjection { .. })
        ));
        assert!(fit_projection(&s, &m, 0.01).is_ok());
        let dup = DenseMatrix::from_rows(&[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]).unwrap();
        assert!(matches!(
            fit_projection(&dup, &m, 0.0),
            Err(Error::SingularProjection { .. })
        ));
    }

    #[test]
    fn unregularized_solution_satisfies_normal_equations() {
        let mut rng = SeededRng::new(5);
        let s = rand_normal(&mut rng, 10, 4, 0.0, 1.0).unwrap();
        let m = rand_normal(&mut rng, 10, 6, 0.0, 1.0).unwrap();
        let w = fit_projection(&s, &m, 0.0).unwrap();
        let st = s.transpose();
        let r = st
            .matmul(&s)
            .unwrap()
            .matmul(&w)
            .unwrap()
            .sub(&st.matmul(&m).unwrap())
            .unwrap();
        assert!(r.max_abs() <= 1e-8);
    }

    #[test]
    fn seen_embedding_maps_to_fitted_prototype() {
        let mut rng = SeededRng::new(6);
        let s = rand_normal(&mut rng, 6, 3, 0.0, 1.0).unwrap();
        let m = rand_normal(&mut rng, 6, 4, 0.0, 1.0).unwrap();
        let w = fit_projection(&s, &m, 0.1).unwrap();
        let fitted = s.matmul(&w).unwrap();
        let pred = unseen_prototypes(&w, &s.select_rows(&[2])).unwrap();
        assert_eq!(pred.row(0), fitted.row(2));
    }

    #[test]
    fn zero_projection_rejected_as_rule() {
        let w = DenseMatrix::zeros(2, 3);
        let e = DenseMatrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let protos = unseen_prototypes(&w, &e).unwrap();
        let seen = DenseMatrix::from_rows(&[[1.0, 1.0, 1.0]]).unwrap();
        assert!(visual_rules(&seen, &protos, &[0, 1], false).is_err());
    }

    #[test]
    fn visual_rules_validation() {
        let seen = DenseMatrix::from_rows(&[[1.0, 2.0], [0.0, 3.0]]).unwrap();
        let unseen = DenseMatrix::from_rows(&[[4.0, 0.0]]).unwrap();
        assert!(visual_rules(&seen, &unseen, &[0, 1, 1], false).is_err());
        let r = visual_rules(&seen, &unseen, &[0, 1, 2], true).unwrap();
        assert!(r.rules().row_iter().all(|row| (l2_norm(row) - 1.0).abs() < 1e-12));
        let seen_only = visual_rules(&seen, &DenseMatrix::zeros(0, 2), &[0, 1], false).unwrap();
        assert_eq!(seen_only.len(), 2);
        assert_eq!(seen_only.kind(), RuleKind::Visual);
    }

    #[test]
    fn cross_validation_prefers_small_ridge_on_clean_linear_data() {
        let mut rng = SeededRng::new(8);
        let s = rand_normal(&mut rng, 15, 4, 0.0, 1.0).unwrap();
        let w = rand_normal(&mut rng, 4, 3, 0.0, 1.0).unwrap();
        let m = s.matmul(&w).unwrap();
        let best = cross_validate_lambda(&s, &m, &[100.0, 1.0, 1e-3], 5).unwrap();
        assert_eq!(best, 1e-3);
    }

    #[test]
    fn rules_text_round_trip() {
        let r = semantic_rules(&table(), &[12, 10], true).unwrap();
        let back = parse_rules(&format_rules(&r), "r").unwrap();
        assert!(back.bit_eq(&r));
        assert_eq!(back.fingerprint(), r.fingerprint());
        assert!(parse_rules("ZSLC-RULES v1 fancy 1 1\n0 0x1p+0\n", "r").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn unseen_projection_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = SeededRng::new(seed);
            let w = rand_normal(&mut rng, 5, 4, 0.0, 1.0).unwrap();
            let s1 = rand_normal(&mut rng, 1, 5, 0.0, 1.0).unwrap();
            let s2 = rand_normal(&mut rng, 1, 5, 0.0, 1.0).unwrap();
            let mix = s1.scale(a).unwrap().add(&s2.scale(b).unwrap()).unwrap();
            let lhs = unseen_prototypes(&w, &mix).unwrap();
            let rhs = unseen_prototypes(&w, &s1).unwrap().scale(a).unwrap()
                .add(&unseen_prototypes(&w, &s2).unwrap().scale(b).unwrap()).unwrap();
            prop_assert!(lhs.sub(&rhs).unwrap().max_abs() <= 1e-10);
        }
    }
}
