//! Seen/unseen confidence rebalancing for generalized zero-shot inference.
//!
//! A logistic discriminator estimates `p_D`, the probability that a sample belongs
//! to the seen pool, from its seen-class logits. It is trained on seen training
//! logits (positives) against synthetic negatives: mixup of seen logits with logits
//! of task-irrelevant data. Scores are then re-modulated as `p_D·p_j` for seen
//! classes and `(1 − p_D)·p_j` for unseen ones.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::dataio::formats::{push_row, read_text, write_output, LineReader};
use crate::dataio::hexfloat::format_hex;
use crate::error::{Error, Result};
use crate::linalg::{dot, DenseMatrix, SeededRng};
use crate::par;

const GRAD_CHUNK: usize = 256;

/// How the seen-logit subvector is presented to the discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiscInput {
    /// Raw logits in class order.
    #[default]
    Logits,
    /// Logits sorted in decreasing order. A linear score over sorted logits can
    /// weigh the top logit against the rest, i.e. express confidence, and it does
    /// not depend on which seen class fired.
    SortedLogits,
    /// Temperature-smoothed softmax over the seen logits.
    Probabilities,
}

impl DiscInput {
    pub fn prepare(self, seen_logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
        let mut v = seen_logits.to_vec();
        match self {
            DiscInput::Logits => {}
            DiscInput::SortedLogits => v.sort_by(|a, b| b.total_cmp(a)),
            DiscInput::Probabilities => v = crate::inference::softmax_temp(&v, temperature)?,
        }
        Ok(v)
    }

    pub fn prepare_rows(self, seen_logits: &DenseMatrix, temperature: f64) -> Result<DenseMatrix> {
        let mut data = Vec::with_capacity(seen_logits.data().len());
        for row in seen_logits.row_iter() {
            data.extend(self.prepare(row, temperature)?);
        }
        DenseMatrix::new(seen_logits.rows(), seen_logits.cols(), data)
    }
}

impl fmt::Display for DiscInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiscInput::Logits => "logits",
            DiscInput::SortedLogits => "sorted_logits",
            DiscInput::Probabilities => "probabilities",
        })
    }
}

impl FromStr for DiscInput {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logits" => Ok(DiscInput::Logits),
            "sorted_logits" => Ok(DiscInput::SortedLogits),
            "probabilities" => Ok(DiscInput::Probabilities),
            _ => Err(Error::Config(format!(
                "unknown discriminator input `{s}` (logits|sorted_logits|probabilities)"
            ))),
        }
    }
}

/// Logistic regression over the seen-logit subvector.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub weight: Vec<f64>,
    pub bias: f64,
    pub input: DiscInput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixupConfig {
    pub alpha: f64,
    pub n_negatives: usize,
    pub seed: u64,
}

impl MixupConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config("mixup.alpha must be > 0".into()));
        }
        if self.n_negatives < 1 {
            return Err(Error::Config("mixup.n_negatives must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorConfig {
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            learning_rate: 0.1,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Rows `λ·seen[i] + (1 − λ)·irrelevant[j]` with `i`, `j` uniform and a fresh `λ`
/// from `coefficient` per row.
pub fn mixup_rows(
    seen: &DenseMatrix,
    irrelevant: &DenseMatrix,
    n: usize,
    rng: &mut SeededRng,
    mut coefficient: impl FnMut(&mut SeededRng) -> Result<f64>,
) -> Result<DenseMatrix> {
    if seen.rows() == 0 || irrelevant.rows() == 0 {
        return Err(Error::Invalid("mixup needs non-empty seen and irrelevant pools".into()));
    }
    if seen.cols() != irrelevant.cols() {
        return Err(Error::shape(
            "mixup_rows",
            format!("{} vs {} logit columns", seen.cols(), irrelevant.cols()),
        ));
    }
    let mut data = Vec::with_capacity(n * seen.cols());
    for _ in 0..n {
        let a = seen.row(rng.below(seen.rows()));
        let b = irrelevant.row(rng.below(irrelevant.rows()));
        let lambda = coefficient(rng)?;
        data.extend(a.iter().zip(b).map(|(x, y)| lambda * x + (1.0 - lambda) * y));
    }
    DenseMatrix::new(n, seen.cols(), data)
}

/// Synthetic pseudo-unseen logits by mixup with `λ ~ Beta(α, α)`.
pub fn synth_negative_logits(
    seen_logits: &DenseMatrix,
    irrelevant_logits: &DenseMatrix,
    config: &MixupConfig,
) -> Result<DenseMatrix> {
    config.validate()?;
    let mut rng = SeededRng::new(config.seed);
    let alpha = config.alpha;
    mixup_rows(seen_logits, irrelevant_logits, config.n_negatives, &mut rng, |r| {
        r.beta(alpha, alpha)
    })
}

/// Fit by full-batch gradient descent on mean binary cross-entropy, from zero
/// initialization. Inputs are standardized per column during fitting and the
/// result is folded back, so the returned parameters act on raw inputs.
pub fn train_discriminator(
    positives: &DenseMatrix,
    negatives: &DenseMatrix,
    config: &DiscriminatorConfig,
) -> Result<Discriminator> {
    if positives.rows() == 0 || negatives.rows() == 0 {
        return Err(Error::Invalid(
            "discriminator needs positive and negative samples".into(),
        ));
    }
    if positives.cols() != negatives.cols() {
        return Err(Error::shape(
            "train_discriminator",
            format!("{} vs {} columns", positives.cols(), negatives.cols()),
        ));
    }
    if !(config.learning_rate >= 0.0) || !config.learning_rate.is_finite() {
        return Err(Error::Config("disc.learning_rate must be >= 0".into()));
    }
    let x = positives.vstack(negatives)?;
    let y: Vec<f64> = std::iter::repeat_n(1.0, positives.rows())
        .chain(std::iter::repeat_n(0.0, negatives.rows()))
        .collect();
    let (n, dim) = x.shape();

    let mut mean = vec![0.0; dim];
    for row in x.row_iter() {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / n as f64);
    }
    let mut scale = vec![0.0; dim];
    for row in x.row_iter() {
        scale
            .iter_mut()
            .zip(row.iter().zip(&mean))
            .for_each(|(s, (v, m))| *s += (v - m).powi(2) / n as f64);
    }
    for s in &mut scale {
        *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
    }
    let z: Vec<f64> = x
        .data()
        .iter()
        .enumerate()
        .map(|(k, v)| (v - mean[k % dim]) / scale[k % dim])
        .collect();
    let z = DenseMatrix::new(n, dim, z)?;

    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let chunks = n.div_ceil(GRAD_CHUNK);
    for _ in 0..config.iterations {
        let partials = par::map_indexed(chunks, |c| {
            let mut gw = vec![0.0; dim];
            let mut gb = 0.0;
            let rows = c * GRAD_CHUNK..((c + 1) * GRAD_CHUNK).min(n);
            for (i, &target) in rows.clone().zip(&y[rows]) {
                let row = z.row(i);
                let err = sigmoid(dot(&w, row) + b) - target;
                gw.iter_mut().zip(row).for_each(|(g, v)| *g += err * v);
                gb += err;
            }
            (gw, gb)
        });
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (pw, pb) in partials {
            gw.iter_mut().zip(&pw).for_each(|(g, v)| *g += v);
            gb += pb;
        }
        let step = config.learning_rate / n as f64;
        w.iter_mut().zip(&gw).for_each(|(wi, g)| *wi -= step * g);
        b -= step * gb;
    }

    let weight: Vec<f64> = w.iter().zip(&scale).map(|(wi, s)| wi / s).collect();
    let bias = b - dot(&weight, &mean);
    let disc = Discriminator {
        weight,
        bias,
        input: DiscInput::Logits,
    };
    let bce = disc.bce(&x, &y)?;
    if !bce.is_finite() || disc.weight.iter().any(|v| !v.is_finite()) || !disc.bias.is_finite() {
        return Err(Error::Diverged {
            epoch: config.iterations,
        });
    }
    Ok(disc)
}

impl Discriminator {
    pub fn dim(&self) -> usize {
        self.weight.len()
    }

    /// Mean binary cross-entropy against 0/1 targets.
    pub fn bce(&self, x: &DenseMatrix, y: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (row, &t) in x.row_iter().zip(y) {
            let z = self.score(row)?;
            // log(1 + e^z) − t·z, written to avoid overflow
            total += z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z;
        }
        Ok(total / y.len().max(1) as f64)
    }

    fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weight.len() {
            return Err(Error::shape(
                "p_seen",
                format!(
                    "input has {} entries, discriminator expects {}",
                    x.len(),
                    self.weight.len()
                ),
            ));
        }
        Ok(dot(&self.weight, x) + self.bias)
    }

    /// `p_D` for a raw seen-logit subvector, after the input transform.
    pub fn p_seen_logits(&self, seen_logits: &[f64], temperature: f64) -> Result<f64> {
        p_seen(self, &self.input.prepare(seen_logits, temperature)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("ZSLC-DISC v1 {}", self.weight.len());
        if self.input != DiscInput::Logits {
            out.push_str(&format!(" {}", self.input));
        }
        out.push('\n');
        push_row(&mut out, &self.weight);
        out.push('\n');
        out.push_str(&format_hex(self.bias));
        out.push('\n');
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut r = LineReader::new(text, origin);
        let (no, line) = r.next_line("a header")?;
        let toks = r.tokens(no, line)?;
        if !(3..=4).contains(&toks.len()) || toks[0] != "ZSLC-DISC" || toks[1] != "v1" {
            return Err(r.error(no, "malformed header, expected `ZSLC-DISC v1 <dim> [input]`"));
        }
        let dim = r.count(no, toks[2])?;
        let input = match toks.get(3) {
            Some(t) => t.parse().map_err(|e: Error| r.error(no, e.to_string()))?,
            None => DiscInput::Logits,
        };
        let (no, line) = r.next_line("the weight row")?;
        let toks = r.tokens(no, line)?;
        if toks.len() != dim {
            return Err(r.error(
                no,
                format!("weight row has {} values, header declares {dim}", toks.len()),
            ));
        }
        let weight = toks.iter().map(|t| r.number(no, t)).collect::<Result<Vec<_>>>()?;
        let (no, line) = r.next_line("the bias")?;
        let bias = r.number(no, line)?;
        r.finish()?;
        Ok(Self { weight, bias, input })
    }

    pub fn save(&self, path: &Path, force: bool) -> Result<()> {
        write_output(path, &self.to_text(), force)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, &path.display().to_string())
    }
}

/// `sigmoid(w·x + b)`, the estimated probability that `x` comes from a seen class.
pub fn p_seen(disc: &Discriminator, seen_logits: &[f64]) -> Result<f64> {
    Ok(sigmoid(disc.score(seen_logits)?))
}

/// `p_D·p_j` on seen classes, `(1 − p_D)·p_j` on unseen ones. Not renormalized.
pub fn rebalance_scores(scores: &[f64], seen_mask: &[bool], p_d: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&p_d) {
        return Err(Error::Parameter(format!("p_D must lie in [0, 1], got {p_d}")));
    }
    if scores.len() != seen_mask.len() {
        return Err(Error::shape(
            "rebalance_scores",
            "scores and seen mask differ in length",
        ));
    }
    Ok(scores
        .iter()
        .zip(seen_mask)
        .map(|(&p, &seen)| if seen { p_d * p } else { (1.0 - p_d) * p })
        .collect())
}

/// Subtract `γ` from seen entries; unseen entries are untouched.
pub fn calibrate_stack(scores: &[f64], seen_mask: &[bool], gamma: f64) -> Vec<f64> {
    scores
        .iter()
        .zip(seen_mask)
        .map(|(&s, &seen)| if seen { s - gamma } else { s })
        .collect()
}

/// Ideal seen/unseen selector. Needs ground truth, so it is only for evaluation.
pub fn oracle_p(is_seen_truth: bool) -> f64 {
    if is_seen_truth {
        1.0
    } else {
        0.0
    }
}
