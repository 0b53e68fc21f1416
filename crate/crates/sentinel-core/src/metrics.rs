//! Binary classification metrics over prediction/label vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SentinelError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// False positive rate in percent.
    pub fpr_pct: f64,
    /// False negative rate in percent.
    pub fnr_pct: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(predictions: &[u8], labels: &[u8]) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(SentinelError::ShapeMismatch(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(SentinelError::EmptyInput("compute_metrics"));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p != 0, y != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Metrics {
        tp,
        fp,
        tn,
        fn_,
        precision,
        recall,
        f1,
        fpr_pct: 100.0 * ratio(fp, fp + tn),
        fnr_pct: 100.0 * ratio(fn_, fn_ + tp),
    })
}
