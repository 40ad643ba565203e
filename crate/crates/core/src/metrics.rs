//! Zero-shot metrics: mean per-class top-1 accuracy (T1) over unseen classes, and the
//! generalized seen/unseen accuracies S and U with their harmonic mean H.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// `correct_c / total_c` for every class in `classes`.
///
/// A class of `classes` without any sample is an error rather than being skipped.
pub fn per_class_accuracy(predictions: &[usize], truths: &[usize], classes: &[usize]) -> Result<BTreeMap<usize, f64>> {
    if predictions.len() != truths.len() {
        return Err(Error::shape(
            "per_class_accuracy",
            format!("{} predictions for {} truths", predictions.len(), truths.len()),
        ));
    }
    let mut counts: BTreeMap<usize, (usize, usize)> = classes.iter().map(|&c| (c, (0, 0))).collect();
    for (&p, &t) in predictions.iter().zip(truths) {
        if let Some((correct, total)) = counts.get_mut(&t) {
            *total += 1;
            *correct += usize::from(p == t);
        }
    }
    counts
        .into_iter()
        .map(|(c, (correct, total))| {
            if total == 0 {
                Err(Error::MetricUndefined(c))
            } else {
                Ok((c, correct as f64 / total as f64))
            }
        })
        .collect()
}

/// Unweighted mean of the per-class accuracies of `classes`.
pub fn mean_per_class_accuracy(predictions: &[usize], truths: &[usize], classes: &[usize]) -> Result<f64> {
    if classes.is_empty() {
        return Err(Error::Invalid("mean per-class accuracy over an empty class set".into()));
    }
    let acc = per_class_accuracy(predictions, truths, classes)?;
    Ok(acc.values().sum::<f64>() / acc.len() as f64)
}

/// Standard zero-shot T1: predictions must come from an unseen-only pool.
pub fn zsl_t1(predictions: &[usize], truths: &[usize], unseen_classes: &[usize]) -> Result<f64> {
    if unseen_classes.is_empty() {
        return Err(Error::Invalid("T1 needs at least one unseen class".into()));
    }
    mean_per_class_accuracy(predictions, truths, unseen_classes)
}

/// `2SU/(S+U)`, and 0 when `S + U = 0`.
pub fn harmonic_mean(s: f64, u: f64) -> f64 {
    if s + u > 0.0 {
        2.0 * s * u / (s + u)
    } else {
        0.0
    }
}

/// Generalized zero-shot `(S, U, H)` from joint-pool predictions of seen and unseen
/// test samples.
pub fn gzsl_h(
    seen_predictions: &[usize],
    seen_truths: &[usize],
    seen_classes: &[usize],
    unseen_predictions: &[usize],
    unseen_truths: &[usize],
    unseen_classes: &[usize],
) -> Result<(f64, f64, f64)> {
    if seen_truths.is_empty() || unseen_truths.is_empty() {
        return Err(Error::Invalid("GZSL needs seen and unseen test samples".into()));
    }
    let s = mean_per_class_accuracy(seen_predictions, seen_truths, seen_classes)?;
    let u = mean_per_class_accuracy(unseen_predictions, unseen_truths, unseen_classes)?;
    Ok((s, u, harmonic_mean(s, u)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionReport {
    pub per_class_accuracy: BTreeMap<usize, f64>,
    pub t1: f64,
    pub s: f64,
    pub u: f64,
    pub h: f64,
}

impl PredictionReport {
    /// `T1=`, `S=`, `U=`, `H=` lines with six decimals.
    pub fn metrics_block(&self) -> String {
        let mut out = String::new();
        for (k, v) in [("T1", self.t1), ("S", self.s), ("U", self.u), ("H", self.h)] {
            let _ = writeln!(out, "{k}={v:.6}");
        }
        out
    }
}
