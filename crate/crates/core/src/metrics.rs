//! Classification metrics, including pairwise accuracy over matched pairs.
//!
//! The positive class is "hallucinated" (label 1). Zero denominators
//! yield 0 rather than NaN so degenerate classifiers stay representable.

use alloc::collections::BTreeMap;
use alloc::format;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub pairwise_accuracy: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

/// Computes the confusion matrix, derived metrics and pairwise accuracy.
/// A pair counts for pairwise accuracy only when both members are
/// classified correctly.
pub fn classify_report(
    predictions: &[u8],
    labels: &[u8],
    pair_ids: &[&str],
) -> Result<EvalReport> {
    if predictions.len() != labels.len() || predictions.len() != pair_ids.len() {
        return Err(Error::Data {
            msg: format!(
                "length mismatch: {} predictions, {} labels, {} pair ids",
                predictions.len(),
                labels.len(),
                pair_ids.len()
            ),
        });
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    let mut pair_state: BTreeMap<&str, (usize, bool)> = BTreeMap::new();
    for ((&pred, &label), &pid) in predictions.iter().zip(labels).zip(pair_ids) {
        if pred > 1 || label > 1 {
            return Err(Error::Data {
                msg: format!("prediction/label outside {{0,1}} for pair {pid}"),
            });
        }
        match (pred, label) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 0) => tn += 1,
            _ => fn_ += 1,
        }
        let entry = pair_state.entry(pid).or_insert((0, true));
        entry.0 += 1;
        entry.1 &= pred == label;
    }
    for (pid, (count, _)) in &pair_state {
        if *count != 2 {
            return Err(Error::Data {
                msg: format!("pair {pid} has {count} members, expected 2"),
            });
        }
    }
    let n = predictions.len();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let both_correct = pair_state.values().filter(|(_, ok)| *ok).count();
    Ok(EvalReport {
        accuracy: ratio(tp + tn, n),
        precision,
        recall,
        f1,
        pairwise_accuracy: ratio(both_correct, pair_state.len()),
        tp,
        fp,
        tn,
        fn_,
    })
}
