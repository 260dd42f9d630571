//! Classification metrics from labels and per-class scores.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// One-vs-rest AUROC; `None` when the class is absent or is the only
    /// class present.
    pub auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Mean F1 over classes present in the evaluated set.
    pub macro_f1: f64,
    /// Mean one-vs-rest AUROC over classes where it is defined; NaN if none.
    pub auroc: f64,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// Classes with no samples, excluded from the macro averages.
    pub absent_classes: Vec<usize>,
}

/// Area under the ROC curve as the Mann–Whitney statistic: the share of
/// (positive, negative) pairs the positive wins, ties counting one half.
/// `None` without at least one positive and one negative.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut pos, mut neg) = (0usize, 0usize);
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // midrank of the tie group, 1-based
        let mid = (i + j + 1) as f64 / 2.0;
        for &idx in &order[i..j] {
            if positive[idx] {
                pos += 1;
                rank_sum += mid;
            } else {
                neg += 1;
            }
        }
        i = j;
    }
    if pos == 0 || neg == 0 {
        return None;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}

/// `scores[i]` holds one score per class for sample `i`; predictions are the
/// argmax (lowest index on ties).
pub fn classification_report(
    labels: &[usize],
    scores: &[Vec<f64>],
    num_classes: usize,
) -> Result<MetricsReport> {
    if labels.len() != scores.len() {
        return Err(Error::Dimension {
            op: "classification_report",
            lhs: format!("{} labels", labels.len()),
            rhs: format!("{} score rows", scores.len()),
        });
    }
    if labels.is_empty() {
        return Err(Error::Data("no samples to evaluate".into()));
    }
    if let Some(row) = scores.iter().find(|r| r.len() != num_classes) {
        return Err(Error::Dimension {
            op: "classification_report",
            lhs: format!("score row of length {}", row.len()),
            rhs: format!("{num_classes} classes"),
        });
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Index {
            index: l,
            len: num_classes,
        });
    }
    let predictions: Vec<usize> = scores.iter().map(|s| crate::ops::argmax(s)).collect();
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&t, &p) in labels.iter().zip(&predictions) {
        confusion[t][p] += 1;
    }
    let mut per_class = Vec::with_capacity(num_classes);
    let mut absent = Vec::new();
    for c in 0..num_classes {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        let f1 = if tp == 0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let class_scores: Vec<f64> = scores.iter().map(|s| s[c]).collect();
        let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        if support == 0 {
            absent.push(c);
        }
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
            support,
            auroc: auroc(&class_scores, &positive),
        });
    }
    let present: Vec<&ClassMetrics> = per_class.iter().filter(|m| m.support > 0).collect();
    let macro_f1 = present.iter().map(|m| m.f1).sum::<f64>() / present.len() as f64;
    let aurocs: Vec<f64> = present.iter().filter_map(|m| m.auroc).collect();
    let auroc = if aurocs.is_empty() {
        f64::NAN
    } else {
        aurocs.iter().sum::<f64>() / aurocs.len() as f64
    };
    let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
    Ok(MetricsReport {
        macro_f1,
        auroc,
        accuracy: correct as f64 / labels.len() as f64,
        per_class,
        confusion,
        absent_classes: absent,
    })
}

/// Plain accuracy of argmax predictions.
pub fn accuracy(labels: &[usize], predictions: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .zip(predictions)
        .filter(|(a, b)| a == b)
        .count();
    hits as f64 / labels.len().max(1) as f64
}
