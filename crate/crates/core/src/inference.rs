//! Scoring test samples against an augmented (seen + unseen) rule pool.
//!
//! Logits are inner products between the trained features and each rule. Scores are
//! the temperature-smoothed softmax of the logits, and the prediction is a single
//! argmax over the pool with ties going to the lowest index.

use crate::backbone::CraftedModel;
use crate::crafting::RuleSet;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::par;

/// Turn `v` into `softmax(v)` in place and return `log Σ exp(v)` of the input.
pub fn softmax_in_place(v: &mut [f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
    max + sum.ln()
}

fn check_temperature(temperature: f64) -> Result<()> {
    if temperature > 0.0 && temperature.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("temperature must be > 0, got {temperature}")))
    }
}

/// `p_j = exp(l_j/τ) / Σ exp(l_k/τ)`.
pub fn softmax_temp(logits: &[f64], temperature: f64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    let mut p: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    softmax_in_place(&mut p);
    Ok(p)
}

/// Row-wise [`softmax_temp`].
pub fn softmax_rows(logits: &DenseMatrix, temperature: f64) -> Result<DenseMatrix> {
    check_temperature(temperature)?;
    let mut data = logits.data().to_vec();
    par::for_each_row_mut(&mut data, logits.cols(), |_, row| {
        row.iter_mut().for_each(|x| *x /= temperature);
        softmax_in_place(row);
    });
    DenseMatrix::new(logits.rows(), logits.cols(), data)
}

/// Index of the largest score; ties go to the lowest index.
pub fn predict(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::Invalid("cannot predict from an empty score vector".into()));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

pub fn predict_rows(scores: &DenseMatrix) -> Result<Vec<usize>> {
    scores.row_iter().map(predict).collect()
}

/// Check that the model's frozen seen rules are exactly the leading rows of `pool`.
pub fn check_pool(model: &CraftedModel, pool: &RuleSet) -> Result<()> {
    let seen = &model.seen_rules;
    let n = seen.len();
    let consistent = pool.dim() == seen.dim()
        && pool.kind() == seen.kind()
        && pool.normalized() == seen.normalized()
        && pool.len() >= n
        && pool.class_ids()[..n] == *seen.class_ids()
        && pool.rules().data()[..n * seen.dim()]
            .iter()
            .zip(seen.rules().data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
    if consistent {
        Ok(())
    } else {
        Err(Error::Consistency(
            "the model's seen rules are not a prefix of the evaluation rule pool".into(),
        ))
    }
}

/// Logits `f(x)·r_j` of every row of `features` against every rule of `pool`.
/// The extractor is only read.
pub fn zsl_logits(model: &CraftedModel, features: &DenseMatrix, pool: &RuleSet) -> Result<DenseMatrix> {
    check_pool(model, pool)?;
    model.extractor.forward(features)?.matmul_transposed(pool.rules())
}

/// Logits against the model's own seen rules.
pub fn seen_logits(model: &CraftedModel, features: &DenseMatrix) -> Result<DenseMatrix> {
    model
        .extractor
        .forward(features)?
        .matmul_transposed(model.seen_rules.rules())
}

/// Per-class scores of one sample, ordered seen classes first.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPrediction {
    pub class_ids: Vec<usize>,
    pub class_scores: Vec<f64>,
    pub seen_mask: Vec<bool>,
}

impl ScoredPrediction {
    pub fn new(class_ids: Vec<usize>, class_scores: Vec<f64>, seen_mask: Vec<bool>) -> Result<Self> {
        if class_ids.len() != class_scores.len() || class_ids.len() != seen_mask.len() {
            return Err(Error::shape(
                "ScoredPrediction::new",
                "class ids, scores and mask differ in length",
            ));
        }
        Ok(Self {
            class_ids,
            class_scores,
            seen_mask,
        })
    }

    pub fn predicted_index(&self) -> Result<usize> {
        predict(&self.class_scores)
    }

    pub fn predicted_class(&self) -> Result<usize> {
        Ok(self.class_ids[self.predicted_index()?])
    }

    pub fn max_score(&self) -> f64 {
        self.class_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Plain average of two members' scores over the same class ordering.
pub fn ensemble_scores(a: &ScoredPrediction, b: &ScoredPrediction) -> Result<ScoredPrediction> {
    if a.class_ids != b.class_ids || a.seen_mask != b.seen_mask {
        return Err(Error::Consistency(
            "ensemble members use different class orderings".into(),
        ));
    }
    Ok(ScoredPrediction {
        class_ids: a.class_ids.clone(),
        class_scores: a
            .class_scores
            .iter()
            .zip(&b.class_scores)
            .map(|(x, y)| 0.5 * (x + y))
            .collect(),
        seen_mask: a.seen_mask.clone(),
    })
}

/// Row-wise plain average of two score matrices.
pub fn ensemble_rows(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.shape() != b.shape() {
        return Err(Error::Consistency(format!(
            "ensemble members have score shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    a.add(b)?.scale(0.5)
}

/// Pick the grid value with the highest criterion; ties keep the earlier entry.
pub fn select_temperature(grid: &[f64], mut criterion: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &t in grid {
        check_temperature(t)?;
        let v = criterion(t)?;
        if best.is_none_or(|(bv, _)| v > bv) {
            best = Some((v, t));
        }
    }
    best.map(|(_, t)| t)
        .ok_or_else(|| Error::Config("temperature grid is empty".into()))
}
