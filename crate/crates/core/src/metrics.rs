//! Classification metrics and per-feature effect sizes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modulation::StmGrid;

/// One-vs-rest ROC-AUC by pair counting: `(wins + ties/2) / (n_pos * n_neg)`.
///
/// Returns `None` when either side is empty.
pub fn roc_auc(is_positive: &[bool], scores: &[f64]) -> Option<f64> {
    assert_eq!(is_positive.len(), scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sweep ascending score runs; each positive beats every negative in a
    // strictly lower run and ties with negatives in its own run.
    let (mut neg_below, mut twice_wins) = (0u64, 0u64);
    let (mut n_pos, mut n_neg) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut run_pos, mut run_neg) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if is_positive[order[j]] {
                run_pos += 1;
            } else {
                run_neg += 1;
            }
            j += 1;
        }
        twice_wins += run_pos * (2 * neg_below + run_neg);
        neg_below += run_neg;
        n_pos += run_pos;
        n_neg += run_neg;
        i = j;
    }
    (n_pos > 0 && n_neg > 0).then(|| twice_wins as f64 / (2 * n_pos * n_neg) as f64)
}

/// Average precision: `sum_k (R_k - R_{k-1}) * P_k` over distinct
/// descending score thresholds. `None` without positives.
pub fn average_precision(is_positive: &[bool], scores: &[f64]) -> Option<f64> {
    assert_eq!(is_positive.len(), scores.len());
    let n_pos = is_positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            tp += is_positive[order[j]] as usize;
            j += 1;
        }
        seen = j;
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    debug_assert_eq!(seen, order.len());
    Some(ap)
}

/// `n_classes x n_classes` counts, rows = true class, columns = predicted.
pub fn confusion_matrix(labels: &[usize], predictions: &[usize], n_classes: usize) -> Vec<Vec<u64>> {
    assert_eq!(labels.len(), predictions.len());
    let mut cm = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in labels.iter().zip(predictions) {
        cm[t][p] += 1;
    }
    cm
}

#[derive(Debug, Clone, PartialEq)]
pub struct F1Scores {
    pub per_class: Vec<f64>,
    pub macro_f1: f64,
}

/// Per-class F1 (0 when precision + recall = 0) and their unweighted mean
/// over all `n_classes` classes.
pub fn f1(labels: &[usize], predictions: &[usize], n_classes: usize) -> F1Scores {
    let cm = confusion_matrix(labels, predictions, n_classes);
    let per_class: Vec<f64> = (0..n_classes)
        .map(|c| {
            let tp = cm[c][c] as f64;
            let fp = (0..n_classes).map(|r| cm[r][c]).sum::<u64>() as f64 - tp;
            let fn_ = cm[c].iter().sum::<u64>() as f64 - tp;
            let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            }
        })
        .collect();
    let macro_f1 = per_class.iter().sum::<f64>() / n_classes.max(1) as f64;
    F1Scores { per_class, macro_f1 }
}

pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Names of the evaluated classes, in score-column order.
    pub classes: Vec<String>,
    pub n_samples: usize,
    pub roc_auc_macro: Option<f64>,
    pub pr_auc_macro: Option<f64>,
    pub roc_auc_per_class: Vec<Option<f64>>,
    pub pr_auc_per_class: Vec<Option<f64>>,
    pub f1_per_class: Vec<f64>,
    pub f1_macro: f64,
    pub confusion: Vec<Vec<u64>>,
    pub support: Vec<u64>,
}

fn mean_defined(values: &[Option<f64>], what: &str, classes: &[String]) -> Option<f64> {
    for (v, c) in values.iter().zip(classes) {
        if v.is_none() {
            log::warn!("{what} undefined for class {c}; excluded from the macro average");
        }
    }
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Builds the full report from true class indices and per-class scores
/// (`scores[i][c]`); predictions are row-wise argmaxes.
pub fn evaluate(labels: &[usize], scores: &[Vec<f64>], classes: &[String]) -> Result<EvalReport> {
    let n_classes = classes.len();
    if labels.len() != scores.len() {
        return Err(Error::shape(labels.len(), scores.len()));
    }
    if let Some(bad) = scores.iter().find(|r| r.len() != n_classes) {
        return Err(Error::shape(n_classes, bad.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::InvalidInput(format!("label index {bad} out of range")));
    }
    let predictions: Vec<usize> = scores.iter().map(|r| argmax(r)).collect();
    let mut roc = Vec::with_capacity(n_classes);
    let mut pr = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let col: Vec<f64> = scores.iter().map(|r| r[c]).collect();
        roc.push(roc_auc(&pos, &col));
        pr.push(average_precision(&pos, &col));
    }
    let f = f1(labels, &predictions, n_classes);
    let confusion = confusion_matrix(labels, &predictions, n_classes);
    let support = confusion.iter().map(|r| r.iter().sum()).collect();
    Ok(EvalReport {
        classes: classes.to_vec(),
        n_samples: labels.len(),
        roc_auc_macro: mean_defined(&roc, "ROC-AUC", classes),
        pr_auc_macro: mean_defined(&pr, "PR-AUC", classes),
        roc_auc_per_class: roc,
        pr_auc_per_class: pr,
        f1_per_class: f.per_class,
        f1_macro: f.macro_f1,
        confusion,
        support,
    })
}

fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn cohens_d_column(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let ((ma, va), (mb, vb)) = (mean_var(a), mean_var(b));
    let pooled = (((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0)).sqrt();
    let diff = ma - mb;
    if pooled > 0.0 {
        diff / pooled
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

/// Per-feature standardized mean difference between two row sets.
///
/// Zero pooled variance gives 0 for equal means and `±inf` otherwise.
pub fn cohens_d(group_a: &[&[f64]], group_b: &[&[f64]]) -> Result<Vec<f64>> {
    if group_a.len() < 2 || group_b.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "Cohen's d needs at least 2 rows per group, got {} and {}",
            group_a.len(),
            group_b.len()
        )));
    }
    let d = group_a[0].len();
    if group_a.iter().chain(group_b).any(|r| r.len() != d) {
        return Err(Error::shape(d, "ragged rows"));
    }
    Ok((0..d)
        .map(|j| {
            let a: Vec<f64> = group_a.iter().map(|r| r[j]).collect();
            let b: Vec<f64> = group_b.iter().map(|r| r[j]).collect();
            cohens_d_column(&a, &b)
        })
        .collect())
}

/// Renders a temporal-major feature map as a CSV grid: the header row holds
/// spectral modulation values, the first column temporal modulation values.
pub fn grid_csv(grid: &StmGrid, values: &[f64]) -> Result<String> {
    if values.len() != grid.n_features() {
        return Err(Error::shape(grid.n_features(), values.len()));
    }
    let mut out = String::from("temporal_hz\\spectral_cyc_oct");
    for s in &grid.spectral_axis {
        write!(out, ",{s}").unwrap();
    }
    out.push('\n');
    for (t, &tv) in grid.temporal_axis.iter().enumerate() {
        write!(out, "{tv}").unwrap();
        for s in 0..grid.spectral_axis.len() {
            let v = values[grid.index(t, s)];
            if v.is_finite() {
                write!(out, ",{v}").unwrap();
            } else {
                write!(out, ",{}", if v > 0.0 { "inf" } else if v < 0.0 { "-inf" } else { "nan" }).unwrap();
            }
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roc_examples() {
        assert_eq!(roc_auc(&[true, true, false, false], &[0.9, 0.8, 0.2, 0.1]), Some(1.0));
        assert_eq!(roc_auc(&[true, false, true, false], &[0.5; 4]), Some(0.5));
        assert_eq!(roc_auc(&[true, true, false, false], &[0.9, 0.4, 0.6, 0.1]), Some(0.75));
        assert_eq!(roc_auc(&[true, true], &[0.1, 0.2]), None);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[true, true, false, false], &[0.9, 0.8, 0.2, 0.1]), Some(1.0));
        let ap = average_precision(&[false, false, true, true], &[0.9, 0.8, 0.2, 0.1]).unwrap();
        assert!((ap - (1.0 / 3.0 + 2.0 / 4.0) / 2.0).abs() < 1e-12);
        assert_eq!(average_precision(&[true, false, false, false], &[0.9, 0.3, 0.2, 0.1]), Some(1.0));
        assert_eq!(average_precision(&[false, false], &[0.9, 0.3]), None);
    }

    #[test]
    fn f1_examples() {
        let perfect = f1(&[0, 1, 2, 3, 4, 5], &[0, 1, 2, 3, 4, 5], 6);
        assert!(perfect.per_class.iter().all(|&v| v == 1.0));
        assert_eq!(perfect.macro_f1, 1.0);
        // Class 0: TP=1, FP=1, FN=1.
        let f = f1(&[0, 0, 1], &[0, 1, 0], 6);
        assert_eq!(f.per_class[0], 0.5);
        // Classes 2..5 absent from both sides count as 0.
        assert_eq!(f.per_class[3], 0.0);
        assert_eq!(f.macro_f1, f.per_class.iter().sum::<f64>() / 6.0);
    }

    #[test]
    fn cohens_d_examples() {
        let a: Vec<&[f64]> = vec![&[0.0, 1.0], &[2.0, 1.0]];
        let b: Vec<&[f64]> = vec![&[1.0, 1.0], &[3.0, 1.0]];
        let d = cohens_d(&a, &b).unwrap();
        assert!((d[0] + 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(d[1], 0.0);
        assert_eq!(cohens_d(&b, &a).unwrap()[0], -d[0]);
        let c: Vec<&[f64]> = vec![&[5.0], &[5.0]];
        let e: Vec<&[f64]> = vec![&[4.0], &[4.0]];
        assert_eq!(cohens_d(&c, &e).unwrap()[0], f64::INFINITY);
        assert!(cohens_d(&c[..1], &e).is_err());
    }

    #[test]
    fn report_shapes() {
        let classes: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let scores = vec![vec![0.8, 0.1, 0.1], vec![0.2, 0.7, 0.1], vec![0.1, 0.1, 0.8], vec![0.6, 0.3, 0.1]];
        let r = evaluate(&[0, 1, 2, 0], &scores, &classes).unwrap();
        assert_eq!(r.f1_macro, 1.0);
        assert_eq!(r.support, vec![2, 1, 1]);
        assert_eq!(r.roc_auc_macro, Some(1.0));
        assert!(evaluate(&[0, 1], &scores, &classes).is_err());
    }

    #[test]
    fn grid_csv_layout() {
        let g = StmGrid::default();
        let csv = grid_csv(&g, &vec![0.5; 2420]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 122);
        assert!(lines[0].ends_with(",7.125"));
        assert!(lines[1].starts_with("-15,"));
        assert_eq!(lines[1].split(',').count(), 21);
    }
}
