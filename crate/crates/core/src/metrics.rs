//! Ranking and thresholded classification metrics.
//!
//! Tie conventions: tied (positive, negative) pairs earn half credit in ROC-AUC,
//! and all samples sharing a score enter the average-precision sum together.

use std::cmp::Ordering;
use std::fmt::Write as _;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths<T>(probs: &[T], labels: &[u8]) -> Result<()> {
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores vs {} labels", probs.len(), labels.len())));
    }
    Ok(())
}

/// Indices sorted by descending score, grouped into runs of equal score.
fn descending_groups<T: Float>(probs: &[T]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap_or(Ordering::Equal));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if probs[g[0]] == probs[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Mann-Whitney ROC-AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counted as one half.
pub fn roc_auc<T: Float>(probs: &[T], labels: &[u8]) -> Result<f64> {
    check_lengths(probs, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count() as u128;
    let n_neg = labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass("ROC-AUC needs positives and negatives".into()));
    }
    // Twice the credit, kept as an integer so the result is exact up to the final division.
    let mut doubled: u128 = 0;
    let mut neg_below: u128 = 0;
    for group in descending_groups(probs).iter().rev() {
        let pos = group.iter().filter(|&&i| labels[i] == 1).count() as u128;
        let neg = group.len() as u128 - pos;
        doubled += pos * (2 * neg_below + neg);
        neg_below += neg;
    }
    Ok(doubled as f64 / (2 * n_pos * n_neg) as f64)
}

/// Step-interpolated average precision: `sum_k (R_k - R_{k-1}) P_k` over
/// descending score groups.
pub fn average_precision<T: Float>(probs: &[T], labels: &[u8]) -> Result<f64> {
    check_lengths(probs, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 {
        return Err(Error::SingleClass("average precision needs at least one positive".into()));
    }
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut ap = 0.0;
    for group in descending_groups(probs) {
        let pos = group.iter().filter(|&&i| labels[i] == 1).count();
        tp += pos;
        seen += group.len();
        if pos > 0 {
            ap += (pos as f64 / n_pos as f64) * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScores {
    pub threshold: f64,
    pub counts: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Confusion counts and F1 for the decision rule `p >= threshold`.
pub fn thresholded_scores<T: Float>(probs: &[T], labels: &[u8], threshold: f64) -> Result<ThresholdScores> {
    check_lengths(probs, labels)?;
    let mut c = Confusion::default();
    for (p, &y) in probs.iter().zip(labels) {
        let predicted = p.to_f64().unwrap_or(f64::NAN) >= threshold;
        match (predicted, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    // Harmonic mean of precision and recall, written on counts so that equal
    // ratios give bit-identical values.
    let f1 = if c.tp == 0 {
        0.0
    } else {
        (2 * c.tp) as f64 / (2 * c.tp + c.fp + c.fn_) as f64
    };
    Ok(ThresholdScores {
        threshold,
        counts: c,
        precision,
        recall,
        f1,
    })
}

/// Test-set summary for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub auc: f64,
    pub ap: f64,
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n_samples: usize,
    pub positive_rate: f64,
}

pub fn evaluate<T: Float>(model: &str, probs: &[T], labels: &[u8], threshold: f64) -> Result<EvalReport> {
    let auc = roc_auc(probs, labels)?;
    let ap = average_precision(probs, labels)?;
    let s = thresholded_scores(probs, labels, threshold)?;
    let positives = labels.iter().filter(|&&y| y == 1).count();
    Ok(EvalReport {
        model: model.to_string(),
        auc,
        ap,
        f1: s.f1,
        recall: s.recall,
        precision: s.precision,
        threshold,
        tp: s.counts.tp,
        fp: s.counts.fp,
        tn: s.counts.tn,
        fn_: s.counts.fn_,
        n_samples: labels.len(),
        positive_rate: positives as f64 / labels.len() as f64,
    })
}

/// Aligned text table with AUC, AP, F1 and Recall columns, one row per model.
pub fn comparison_table(reports: &[EvalReport]) -> String {
    let width = reports.iter().map(|r| r.model.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}", "Model", "AUC", "AP", "F1", "Recall");
    let _ = writeln!(out, "{}", "-".repeat(width + 4 * 8));
    for r in reports {
        let _ = writeln!(
            out,
            "{:<width$}  {:>6.3}  {:>6.3}  {:>6.3}  {:>6.3}",
            r.model, r.auc, r.ap, r.f1, r.recall
        );
    }
    out
}
