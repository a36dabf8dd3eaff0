//! Evaluation metrics: category-level, binary (merged toxic), and
//! source-identification metrics, with confusion matrices and CSV reports.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::Category;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction and truth lengths differ: {pred} vs {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("empty evaluation set")]
    Empty,
    #[error("malformed report line {0}: '{1}'")]
    BadReportLine(usize, String),
}

/// K x K counts; rows are truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    /// Build from parallel index vectors over an arbitrary label set.
    pub fn from_indices(
        labels: Vec<String>,
        pred: &[usize],
        truth: &[usize],
    ) -> Result<Self, MetricsError> {
        if pred.len() != truth.len() {
            return Err(MetricsError::LengthMismatch {
                pred: pred.len(),
                truth: truth.len(),
            });
        }
        if pred.is_empty() {
            return Err(MetricsError::Empty);
        }
        let mut cm = ConfusionMatrix::new(labels);
        for (&p, &t) in pred.iter().zip(truth) {
            cm.counts[t][p] += 1;
        }
        Ok(cm)
    }

    fn new(labels: Vec<String>) -> Self {
        let k = labels.len();
        ConfusionMatrix {
            labels,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().map(|row| row.iter().sum::<usize>()).sum()
    }

    fn row_sum(&self, i: usize) -> usize {
        self.counts[i].iter().sum()
    }

    fn col_sum(&self, j: usize) -> usize {
        self.counts.iter().map(|row| row[j]).sum()
    }

    /// Per-class F1 under the degenerate-class policy: a class absent from
    /// both truth and predictions is excluded (None); otherwise F1 is 0 when
    /// there are no true positives.
    fn per_class_f1(&self, i: usize) -> Option<f64> {
        let tp = self.counts[i][i];
        let fn_ = self.row_sum(i) - tp;
        let fp = self.col_sum(i) - tp;
        if tp + fn_ + fp == 0 {
            return None;
        }
        Some(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
    }

    /// Unweighted mean of per-class F1 over non-excluded classes.
    pub fn macro_f1(&self) -> f64 {
        let f1s: Vec<f64> = (0..self.labels.len())
            .filter_map(|i| self.per_class_f1(i))
            .collect();
        if f1s.is_empty() {
            0.0
        } else {
            f1s.iter().sum::<f64>() / f1s.len() as f64
        }
    }

    pub fn overall_accuracy(&self) -> f64 {
        let trace: usize = (0..self.labels.len()).map(|i| self.counts[i][i]).sum();
        trace as f64 / self.total() as f64
    }

    /// Recall of class i; None when the class has no support.
    pub fn recall(&self, i: usize) -> Option<f64> {
        let support = self.row_sum(i);
        if support == 0 {
            None
        } else {
            Some(self.counts[i][i] as f64 / support as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub overall_accuracy: f64,
    /// Recall per toxic category (C1..C7), None when the split has no
    /// samples of that category.
    pub per_category_accuracy: Vec<(String, Option<f64>)>,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

/// Category accuracy, per-category recall, and macro-F1 over all 8 classes.
pub fn category_metrics(
    pred: &[Category],
    truth: &[Category],
) -> Result<CategoryMetrics, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut confusion =
        ConfusionMatrix::new(Category::ALL.iter().map(|c| c.name().to_string()).collect());
    for (&p, &t) in pred.iter().zip(truth) {
        confusion.counts[t.index()][p.index()] += 1;
    }
    let per_category_accuracy = Category::TOXIC
        .iter()
        .map(|c| (c.name().to_string(), confusion.recall(c.index())))
        .collect();
    Ok(CategoryMetrics {
        overall_accuracy: confusion.overall_accuracy(),
        per_category_accuracy,
        macro_f1: confusion.macro_f1(),
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    /// F1 on the toxic class; 0 with the degenerate flag set when undefined.
    pub f1_toxic: f64,
    pub balanced_accuracy: f64,
    /// Recall on toxic samples.
    pub toxic_accuracy: f64,
    pub degenerate_f1: bool,
}

/// Merge all toxic categories into one class, then score.
pub fn binary_metrics(pred: &[Category], truth: &[Category]) -> Result<BinaryMetrics, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (t.is_toxic(), p.is_toxic()) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
        }
    }
    let n = pred.len() as f64;
    let accuracy = (tp + tn) as f64 / n;
    let toxic_support = tp + fn_;
    let safe_support = tn + fp;
    let recall_toxic = if toxic_support > 0 {
        Some(tp as f64 / toxic_support as f64)
    } else {
        None
    };
    let recall_safe = if safe_support > 0 {
        Some(tn as f64 / safe_support as f64)
    } else {
        None
    };
    let balanced_accuracy = match (recall_toxic, recall_safe) {
        (Some(a), Some(b)) => (a + b) / 2.0,
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => 0.0,
    };
    let degenerate_f1 = 2 * tp + fp + fn_ == 0;
    let f1_toxic = if degenerate_f1 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    Ok(BinaryMetrics {
        accuracy,
        f1_toxic,
        balanced_accuracy,
        toxic_accuracy: recall_toxic.unwrap_or(0.0),
        degenerate_f1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub degenerate_f1: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceMetrics {
    pub textual: LabelMetrics,
    pub paralinguistic: LabelMetrics,
    /// Unweighted mean of the two label F1s.
    pub macro_f1: f64,
    /// F1 over the 2N pooled binary decisions.
    pub micro_f1: f64,
    /// Fraction of samples with both labels exactly right.
    pub subset_accuracy: f64,
}

/// Multi-label source metrics over (textual, paralinguistic) pairs.
pub fn source_metrics(
    pred: &[(bool, bool)],
    truth: &[(bool, bool)],
) -> Result<SourceMetrics, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    let label = |select: fn(&(bool, bool)) -> bool| -> (LabelMetrics, [usize; 3]) {
        let (mut tp, mut fp, mut fn_, mut correct) = (0usize, 0usize, 0usize, 0usize);
        for (p, t) in pred.iter().zip(truth) {
            let (pv, tv) = (select(p), select(t));
            if pv == tv {
                correct += 1;
            }
            match (tv, pv) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        let degenerate_f1 = 2 * tp + fp + fn_ == 0;
        let f1 = if degenerate_f1 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        };
        (
            LabelMetrics {
                accuracy: correct as f64 / pred.len() as f64,
                f1,
                degenerate_f1,
            },
            [tp, fp, fn_],
        )
    };
    let (textual, t_counts) = label(|p| p.0);
    let (paralinguistic, p_counts) = label(|p| p.1);
    let [tp, fp, fn_] = [
        t_counts[0] + p_counts[0],
        t_counts[1] + p_counts[1],
        t_counts[2] + p_counts[2],
    ];
    let micro_f1 = if 2 * tp + fp + fn_ == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    let subset_accuracy = pred
        .iter()
        .zip(truth)
        .filter(|(p, t)| p == t)
        .count() as f64
        / pred.len() as f64;
    Ok(SourceMetrics {
        macro_f1: (textual.f1 + paralinguistic.f1) / 2.0,
        micro_f1,
        subset_accuracy,
        textual,
        paralinguistic,
    })
}

/// The complete evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sample_count: usize,
    pub category: CategoryMetrics,
    pub binary: BinaryMetrics,
    /// Absent in binary mode, where the source head is disabled.
    pub source: Option<SourceMetrics>,
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

/// Serialize the report as `metric,value` CSV rows in a stable order.
/// Per-category recalls without support are reported as `na`.
pub fn report_to_csv(report: &MetricsReport) -> Result<String, MetricsError> {
    if report.sample_count == 0 {
        return Err(MetricsError::Empty);
    }
    let mut rows: Vec<(String, String)> = vec![
        ("sample_count".into(), report.sample_count.to_string()),
        ("overall_accuracy".into(), fmt6(report.category.overall_accuracy)),
        ("macro_f1".into(), fmt6(report.category.macro_f1)),
    ];
    for (name, acc) in &report.category.per_category_accuracy {
        let key = format!("acc_{}", slug(name));
        rows.push((key, acc.map(fmt6).unwrap_or_else(|| "na".into())));
    }
    rows.push(("binary_accuracy".into(), fmt6(report.binary.accuracy)));
    rows.push(("binary_f1".into(), fmt6(report.binary.f1_toxic)));
    rows.push(("balanced_accuracy".into(), fmt6(report.binary.balanced_accuracy)));
    rows.push(("toxic_accuracy".into(), fmt6(report.binary.toxic_accuracy)));
    if let Some(src) = &report.source {
        rows.push(("source_textual_accuracy".into(), fmt6(src.textual.accuracy)));
        rows.push(("source_textual_f1".into(), fmt6(src.textual.f1)));
        rows.push(("source_paralinguistic_accuracy".into(), fmt6(src.paralinguistic.accuracy)));
        rows.push(("source_paralinguistic_f1".into(), fmt6(src.paralinguistic.f1)));
        rows.push(("source_macro_f1".into(), fmt6(src.macro_f1)));
        rows.push(("source_micro_f1".into(), fmt6(src.micro_f1)));
        rows.push(("source_subset_accuracy".into(), fmt6(src.subset_accuracy)));
    }
    for (i, row_label) in report.category.confusion.labels.iter().enumerate() {
        for (j, col_label) in report.category.confusion.labels.iter().enumerate() {
            let key = format!("cm_{}_{}", slug(row_label), slug(col_label));
            rows.push((key, report.category.confusion.counts[i][j].to_string()));
        }
    }
    Ok(serialize_rows(&rows))
}

/// Lowercase key slug: non-alphanumeric runs collapse to single underscores.
fn slug(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    for c in name.to_lowercase().chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c);
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_end_matches('_').to_string()
}

fn serialize_rows(rows: &[(String, String)]) -> String {
    let mut out = String::from("metric,value\n");
    for (k, v) in rows {
        out.push_str(k);
        out.push(',');
        out.push_str(v);
        out.push('\n');
    }
    out
}

/// Parse a report CSV back into ordered rows; re-serializing the result is
/// byte-identical to the input.
pub fn parse_report_csv(text: &str) -> Result<Vec<(String, String)>, MetricsError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "metric,value")) => {}
        Some((i, line)) => return Err(MetricsError::BadReportLine(i + 1, line.to_string())),
        None => return Err(MetricsError::Empty),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let (k, v) = line
            .split_once(',')
            .ok_or_else(|| MetricsError::BadReportLine(i + 1, line.to_string()))?;
        rows.push((k.to_string(), v.to_string()));
    }
    Ok(rows)
}

pub fn rows_to_csv(rows: &[(String, String)]) -> String {
    serialize_rows(rows)
}

/// Fixed-width human-readable table of the headline metrics.
pub fn report_to_table(report: &MetricsReport) -> Result<String, MetricsError> {
    let csv = report_to_csv(report)?;
    let mut out = String::new();
    out.push_str(&format!("{:<34} {:>12}\n", "metric", "value"));
    for (k, v) in parse_report_csv(&csv).unwrap() {
        if k.starts_with("cm_") {
            continue;
        }
        out.push_str(&format!("{k:<34} {v:>12}\n"));
    }
    Ok(out)
}

/// Brute-force per-sample counting oracle used by verification suites. Kept
/// deliberately independent of the confusion-matrix implementation above.
pub mod oracle {
    use super::*;

    pub fn overall_accuracy(pred: &[Category], truth: &[Category]) -> f64 {
        let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
        correct as f64 / truth.len() as f64
    }

    pub fn recall_of(pred: &[Category], truth: &[Category], class: Category) -> Option<f64> {
        let idx: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] == class).collect();
        if idx.is_empty() {
            return None;
        }
        let hit = idx.iter().filter(|&&i| pred[i] == class).count();
        Some(hit as f64 / idx.len() as f64)
    }

    pub fn f1_of(pred: &[Category], truth: &[Category], class: Category) -> Option<f64> {
        let tp = (0..truth.len())
            .filter(|&i| truth[i] == class && pred[i] == class)
            .count();
        let fp = (0..truth.len())
            .filter(|&i| truth[i] != class && pred[i] == class)
            .count();
        let fn_ = (0..truth.len())
            .filter(|&i| truth[i] == class && pred[i] != class)
            .count();
        if tp + fp + fn_ == 0 {
            None
        } else {
            Some(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
        }
    }

    pub fn macro_f1(pred: &[Category], truth: &[Category]) -> f64 {
        let f1s: Vec<f64> = Category::ALL
            .iter()
            .filter_map(|&c| f1_of(pred, truth, c))
            .collect();
        f1s.iter().sum::<f64>() / f1s.len().max(1) as f64
    }

    pub fn binary_accuracy(pred: &[Category], truth: &[Category]) -> f64 {
        let correct = pred
            .iter()
            .zip(truth)
            .filter(|(p, t)| p.is_toxic() == t.is_toxic())
            .count();
        correct as f64 / truth.len() as f64
    }

    pub fn subset_accuracy(pred: &[(bool, bool)], truth: &[(bool, bool)]) -> f64 {
        pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64
    }

    pub fn micro_f1(pred: &[(bool, bool)], truth: &[(bool, bool)]) -> f64 {
        let decisions: Vec<(bool, bool)> = pred
            .iter()
            .zip(truth)
            .flat_map(|(p, t)| [(p.0, t.0), (p.1, t.1)])
            .collect();
        let tp = decisions.iter().filter(|(p, t)| *p && *t).count();
        let fp = decisions.iter().filter(|(p, t)| *p && !*t).count();
        let fn_ = decisions.iter().filter(|(p, t)| !*p && *t).count();
        if 2 * tp + fp + fn_ == 0 {
            0.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        }
    }
}

/// Histogram of categories, used by derivation reports and class weighting.
pub fn category_counts(categories: &[Category]) -> HashMap<Category, usize> {
    let mut counts = HashMap::new();
    for &c in categories {
        *counts.entry(c).or_insert(0) += 1;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use Category::*;

    #[test]
    fn perfect_predictions_score_one_everywhere() {
        let truth = vec![Sarcasm, Horror, Safe, ViolenceHarm, Safe];
        let cat = category_metrics(&truth, &truth).unwrap();
        assert_eq!(cat.overall_accuracy, 1.0);
        assert_eq!(cat.macro_f1, 1.0);
        let bin = binary_metrics(&truth, &truth).unwrap();
        assert_eq!(bin.accuracy, 1.0);
        assert_eq!(bin.balanced_accuracy, 1.0);
        let pairs = vec![(true, false), (false, true), (false, false)];
        let src = source_metrics(&pairs, &pairs).unwrap();
        assert_eq!(src.subset_accuracy, 1.0);
    }

    #[test]
    fn two_class_toy_confusion_hand_case() {
        // truth [A,A,B,B], pred [A,B,B,B] with A=Sarcasm, B=Safe.
        let truth = vec![Sarcasm, Sarcasm, Safe, Safe];
        let pred = vec![Sarcasm, Safe, Safe, Safe];
        let cat = category_metrics(&pred, &truth).unwrap();
        assert!((cat.overall_accuracy - 0.75).abs() < 1e-12);
        // F1_A = 2/3, F1_B = 0.8; other six classes excluded.
        assert!((cat.macro_f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_class_truth_excludes_absent_classes() {
        let truth = vec![Horror, Horror, Horror];
        let cat = category_metrics(&truth, &truth).unwrap();
        assert_eq!(cat.macro_f1, 1.0);
        for (name, acc) in &cat.per_category_accuracy {
            if name == "Horror" {
                assert_eq!(*acc, Some(1.0));
            } else {
                assert_eq!(*acc, None);
            }
        }
    }

    #[test]
    fn all_toxic_predictor_hand_case() {
        // truth: 8 toxic / 2 safe, pred all toxic.
        let mut truth = vec![ViolenceHarm; 8];
        truth.extend([Safe, Safe]);
        let pred = vec![ViolenceHarm; 10];
        let bin = binary_metrics(&pred, &truth).unwrap();
        assert!((bin.accuracy - 0.8).abs() < 1e-12);
        assert_eq!(bin.toxic_accuracy, 1.0);
        assert!((bin.balanced_accuracy - 0.5).abs() < 1e-12);
    }

    #[test]
    fn wrong_toxic_category_still_binary_correct() {
        let truth = vec![Horror];
        let pred = vec![Sexual];
        let bin = binary_metrics(&pred, &truth).unwrap();
        assert_eq!(bin.accuracy, 1.0);
        let cat = category_metrics(&pred, &truth).unwrap();
        assert_eq!(cat.overall_accuracy, 0.0);
    }

    #[test]
    fn source_one_wrong_label_hand_pooling() {
        let truth = vec![(true, true), (true, false), (false, true), (false, false)];
        let mut pred = truth.clone();
        pred[0].1 = false;
        let src = source_metrics(&pred, &truth).unwrap();
        assert!((src.subset_accuracy - 0.75).abs() < 1e-12);
        // Pooled decisions: 8 total, 7 correct; tp=3, fp=0, fn=1.
        assert!((src.micro_f1 - 6.0 / 7.0).abs() < 1e-12);
        assert_eq!(oracle::micro_f1(&pred, &truth), src.micro_f1);
    }

    #[test]
    fn all_negative_on_all_negative_truth_flags_degenerate_f1() {
        let pairs = vec![(false, false); 5];
        let src = source_metrics(&pairs, &pairs).unwrap();
        assert_eq!(src.textual.accuracy, 1.0);
        assert_eq!(src.textual.f1, 0.0);
        assert!(src.textual.degenerate_f1);
    }

    #[test]
    fn macro_f1_bounded_by_per_class_f1() {
        let truth = vec![Sarcasm, Sarcasm, Horror, Safe, Safe, Safe];
        let pred = vec![Sarcasm, Horror, Horror, Safe, Sarcasm, Safe];
        let cat = category_metrics(&pred, &truth).unwrap();
        let f1s: Vec<f64> = (0..8)
            .filter_map(|i| cat.confusion.per_class_f1(i))
            .collect();
        let min = f1s.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = f1s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(cat.macro_f1 >= min - 1e-12 && cat.macro_f1 <= max + 1e-12);
    }

    #[test]
    fn report_round_trips_byte_identical() {
        let truth = vec![Sarcasm, Horror, Safe, Safe, ViolenceHarm];
        let pred = vec![Sarcasm, Safe, Safe, Safe, ViolenceHarm];
        let report = MetricsReport {
            sample_count: truth.len(),
            category: category_metrics(&pred, &truth).unwrap(),
            binary: binary_metrics(&pred, &truth).unwrap(),
            source: Some(
                source_metrics(
                    &[(true, false); 5],
                    &[(true, false), (false, true), (false, false), (false, false), (true, false)],
                )
                .unwrap(),
            ),
        };
        let csv = report_to_csv(&report).unwrap();
        let rows = parse_report_csv(&csv).unwrap();
        assert_eq!(rows_to_csv(&rows), csv);
        assert!(report_to_table(&report).unwrap().contains("overall_accuracy"));
    }

    #[test]
    fn empty_report_is_an_error() {
        let report = MetricsReport {
            sample_count: 0,
            category: CategoryMetrics {
                overall_accuracy: 0.0,
                per_category_accuracy: vec![],
                macro_f1: 0.0,
                confusion: ConfusionMatrix::new(vec![]),
            },
            binary: BinaryMetrics {
                accuracy: 0.0,
                f1_toxic: 0.0,
                balanced_accuracy: 0.0,
                toxic_accuracy: 0.0,
                degenerate_f1: true,
            },
            source: None,
        };
        assert!(matches!(report_to_csv(&report), Err(MetricsError::Empty)));
    }
}
