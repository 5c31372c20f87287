//! Classification evaluation: confusion matrix, per-class precision, recall
//! and f1, sensitivity/specificity, and the ROC curve with its trapezoidal
//! AUC. The positive class is damaged (1).

use std::io::Write;

use thiserror::Error;

use crate::numfmt::fmt_sig;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{labels} labels vs {predictions} predictions")]
    LengthMismatch { labels: usize, predictions: usize },
    #[error("ROC needs at least one positive and one negative label")]
    SingleClassLabels,
}

/// Counts for binary classification; positive class = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }

    pub fn accuracy(&self) -> f64 {
        (self.true_pos + self.true_neg) as f64 / self.total() as f64
    }
}

/// Tally a confusion matrix from parallel label/prediction vectors.
pub fn confusion(labels: &[u8], predictions: &[u8]) -> Result<ConfusionMatrix, MetricsError> {
    if labels.len() != predictions.len() {
        return Err(MetricsError::LengthMismatch {
            labels: labels.len(),
            predictions: predictions.len(),
        });
    }
    debug_assert!(!labels.is_empty());
    let mut cm = ConfusionMatrix {
        true_pos: 0,
        false_pos: 0,
        true_neg: 0,
        false_neg: 0,
    };
    for (&l, &p) in labels.iter().zip(predictions) {
        debug_assert!(l <= 1 && p <= 1);
        match (l, p) {
            (1, 1) => cm.true_pos += 1,
            (0, 1) => cm.false_pos += 1,
            (0, 0) => cm.true_neg += 1,
            _ => cm.false_neg += 1,
        }
    }
    Ok(cm)
}

/// A ratio metric; `defined` is false when the denominator was zero (the
/// value is then reported as 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric {
    pub value: f64,
    pub defined: bool,
}

impl Metric {
    fn ratio(numerator: u64, denominator: u64) -> Self {
        if denominator == 0 {
            Metric {
                value: 0.0,
                defined: false,
            }
        } else {
            Metric {
                value: numerator as f64 / denominator as f64,
                defined: true,
            }
        }
    }
}

/// Per-class evaluation row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: Metric,
    pub recall: Metric,
    pub f1: Metric,
    pub support: u64,
}

fn f1_of(precision: Metric, recall: Metric) -> Metric {
    if !precision.defined || !recall.defined || precision.value + recall.value == 0.0 {
        return Metric {
            value: 0.0,
            defined: false,
        };
    }
    Metric {
        value: 2.0 * precision.value * recall.value / (precision.value + recall.value),
        defined: true,
    }
}

/// Full classification report for both classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassReport {
    pub accuracy: f64,
    pub negative: ClassMetrics,
    pub positive: ClassMetrics,
}

impl ClassReport {
    /// Recall of the positive class.
    pub fn sensitivity(&self) -> Metric {
        self.positive.recall
    }

    /// Recall of the negative class.
    pub fn specificity(&self) -> Metric {
        self.negative.recall
    }
}

/// Derive the report from a confusion matrix. Zero-denominator metrics come
/// back as 0 with `defined = false`.
pub fn class_report(cm: &ConfusionMatrix) -> ClassReport {
    assert!(cm.total() > 0, "empty confusion matrix");
    let pos_precision = Metric::ratio(cm.true_pos, cm.true_pos + cm.false_pos);
    let pos_recall = Metric::ratio(cm.true_pos, cm.true_pos + cm.false_neg);
    let neg_precision = Metric::ratio(cm.true_neg, cm.true_neg + cm.false_neg);
    let neg_recall = Metric::ratio(cm.true_neg, cm.true_neg + cm.false_pos);
    ClassReport {
        accuracy: cm.accuracy(),
        negative: ClassMetrics {
            precision: neg_precision,
            recall: neg_recall,
            f1: f1_of(neg_precision, neg_recall),
            support: cm.true_neg + cm.false_pos,
        },
        positive: ClassMetrics {
            precision: pos_precision,
            recall: pos_recall,
            f1: f1_of(pos_precision, pos_recall),
            support: cm.true_pos + cm.false_neg,
        },
    }
}

/// One ROC operating point: predict 1 iff score >= threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve with trapezoidal AUC. Starts at (0, 0) with threshold infinity
/// and ends at (1, 1); tied scores collapse into a single point.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Sweep thresholds over the distinct scores. The AUC accumulates in integer
/// arithmetic, so it equals pair counting (ties at half weight) exactly.
pub fn roc_auc(labels: &[u8], scores: &[f64]) -> Result<RocCurve, MetricsError> {
    if labels.len() != scores.len() {
        return Err(MetricsError::LengthMismatch {
            labels: labels.len(),
            predictions: scores.len(),
        });
    }
    let positives = labels.iter().filter(|&&l| l == 1).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClassLabels);
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut auc_twice = 0u64;
    let mut i = 0;
    while i < order.len() {
        let score = scores[order[i]];
        let (prev_tp, prev_fp) = (tp, fp);
        while i < order.len() && scores[order[i]] == score {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        auc_twice += (fp - prev_fp) * (prev_tp + tp);
        points.push(RocPoint {
            threshold: score,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }
    let auc = auc_twice as f64 / (2 * positives * negatives) as f64;
    Ok(RocCurve { points, auc })
}

pub const ROC_HEADER: [&str; 3] = ["threshold", "fpr", "tpr"];

pub fn write_roc_csv<W: Write>(curve: &RocCurve, output: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(output);
    w.write_record(ROC_HEADER)?;
    for p in &curve.points {
        w.write_record([fmt_sig(p.threshold), fmt_sig(p.fpr), fmt_sig(p.tpr)])?;
    }
    w.flush()?;
    Ok(())
}

/// Report JSON keyed by class plus global accuracy. Field names are stable.
pub fn report_json(report: &ClassReport) -> serde_json::Value {
    let class = |m: &ClassMetrics| {
        serde_json::json!({
            "precision": m.precision.value,
            "recall": m.recall.value,
            "f1": m.f1.value,
            "support": m.support,
        })
    };
    let mut value = serde_json::json!({
        "accuracy": report.accuracy,
        "0": class(&report.negative),
        "1": class(&report.positive),
    });
    crate::numfmt::round_json_floats(&mut value);
    value
}

pub fn write_report_json<W: Write>(report: &ClassReport, output: W) -> serde_json::Result<()> {
    serde_json::to_writer_pretty(output, &report_json(report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let cm = confusion(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!(cm.true_pos, 2);
        assert_eq!(cm.true_neg, 1);
        assert_eq!(cm.false_pos, 0);
        assert_eq!(cm.false_neg, 0);
        let report = class_report(&cm);
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.positive.precision.value, 1.0);
        assert_eq!(report.positive.recall.value, 1.0);
    }

    #[test]
    fn degenerate_all_negative_predictor() {
        let cm = confusion(&[1, 1], &[0, 0]).unwrap();
        assert_eq!(cm.false_neg, 2);
        assert_eq!(cm.total(), 2);
        let report = class_report(&cm);
        // No predicted positives: precision undefined, reported 0.
        assert!(!report.positive.precision.defined);
        assert_eq!(report.positive.precision.value, 0.0);
        assert_eq!(report.sensitivity().value, 0.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(matches!(
            confusion(&[1, 0], &[1]),
            Err(MetricsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn f1_from_high_precision_low_recall() {
        // precision 1.00, recall 0.18 (tp=9, fp=0, fn=41)
        let cm = ConfusionMatrix {
            true_pos: 9,
            false_pos: 0,
            true_neg: 50,
            false_neg: 41,
        };
        let report = class_report(&cm);
        assert_eq!(report.positive.precision.value, 1.0);
        assert_eq!(report.positive.recall.value, 0.18);
        assert!((report.positive.f1.value - 0.305).abs() < 0.005);
        assert_eq!((report.positive.f1.value * 100.0).round() as i64, 31);
    }

    #[test]
    fn roc_perfectly_separated() {
        let curve = roc_auc(&[0, 0, 1, 1], &[0.1, 0.2, 0.8, 0.9]).unwrap();
        assert_eq!(curve.auc, 1.0);
        assert_eq!(curve.points.first().unwrap().threshold, f64::INFINITY);
        assert_eq!(curve.points.first().unwrap().tpr, 0.0);
        let last = curve.points.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
    }

    #[test]
    fn roc_constant_scores_are_diagonal() {
        let curve = roc_auc(&[0, 1, 0, 1], &[0.5, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(curve.auc, 0.5);
        assert_eq!(curve.points.len(), 2);
    }

    #[test]
    fn roc_single_class_is_error() {
        assert!(matches!(
            roc_auc(&[1, 1], &[0.2, 0.4]),
            Err(MetricsError::SingleClassLabels)
        ));
    }

    #[test]
    fn roc_point_count_bounded_by_distinct_scores() {
        // Ten-tree vote fractions: at most 11 distinct values + infinity.
        let labels = vec![0, 1, 0, 1, 1, 0, 1, 0, 1, 0];
        let scores: Vec<f64> = (0..10).map(|i| (i % 4) as f64 / 10.0).collect();
        let curve = roc_auc(&labels, &scores).unwrap();
        assert!(curve.points.len() <= 12);
    }

    #[test]
    fn report_json_field_names() {
        let cm = confusion(&[1, 0, 1, 0], &[1, 0, 0, 0]).unwrap();
        let json = report_json(&class_report(&cm));
        assert!(json.get("accuracy").is_some());
        for class in ["0", "1"] {
            for field in ["precision", "recall", "f1", "support"] {
                assert!(json[class].get(field).is_some(), "missing {class}.{field}");
            }
        }
    }
}
