//! Confusion-matrix construction and the five reported metrics: precision,
//! sensitivity, specificity, accuracy, and F1, macro-averaged by default.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// K x K count grid; rows are true labels, columns predictions. Labels are
/// 1-based grades.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
    k: usize,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|row| row.len() != k) {
            return Err(Error::validation("confusion matrix must be square and non-empty"));
        }
        Ok(ConfusionMatrix { counts, k })
    }

    /// Count (true, predicted) pairs; order-independent.
    pub fn from_labels(true_labels: &[u8], predicted: &[u8], k: usize) -> Result<Self> {
        if true_labels.len() != predicted.len() {
            return Err(Error::validation(format!(
                "label length mismatch: {} vs {}",
                true_labels.len(),
                predicted.len()
            )));
        }
        if k == 0 {
            return Err(Error::validation("k must be positive"));
        }
        let mut counts = vec![vec![0u64; k]; k];
        for (&t, &p) in true_labels.iter().zip(predicted) {
            if t < 1 || t as usize > k || p < 1 || p as usize > k {
                return Err(Error::validation(format!(
                    "label out of range 1..={k}: true {t}, pred {p}"
                )));
            }
            counts[t as usize - 1][p as usize - 1] += 1;
        }
        Ok(ConfusionMatrix { counts, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.counts[i][i]).sum()
    }

    /// Per-class (TP, FP, FN, TN) in one-vs-rest terms.
    pub fn class_counts(&self, class: usize) -> (u64, u64, u64, u64) {
        let tp = self.counts[class][class];
        let fp: u64 = (0..self.k)
            .filter(|&t| t != class)
            .map(|t| self.counts[t][class])
            .sum();
        let fn_: u64 = (0..self.k)
            .filter(|&p| p != class)
            .map(|p| self.counts[class][p])
            .sum();
        let tn = self.total() - tp - fp - fn_;
        (tp, fp, fn_, tn)
    }

    pub fn to_array(&self) -> Array2<u64> {
        Array2::from_shape_fn((self.k, self.k), |(t, p)| self.counts[t][p])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Macro,
    Micro,
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
}

/// Per-class and averaged metrics for one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub averaging: Averaging,
}

fn ratio(num: u64, den: u64, what: &str, class: usize) -> f64 {
    if den == 0 {
        log::warn!("class {}: zero denominator for {what}, reporting 0", class + 1);
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Macro-averaged metrics (the report default).
pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    compute_metrics_with(cm, Averaging::Macro)
}

pub fn compute_metrics_with(cm: &ConfusionMatrix, averaging: Averaging) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::validation("empty confusion matrix"));
    }
    let k = cm.k();
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let (tp, fp, fn_, tn) = cm.class_counts(c);
        let precision = ratio(tp, tp + fp, "precision", c);
        let sensitivity = ratio(tp, tp + fn_, "sensitivity", c);
        let specificity = ratio(tn, tn + fp, "specificity", c);
        let f1 = if precision + sensitivity == 0.0 {
            0.0
        } else {
            2.0 * precision * sensitivity / (precision + sensitivity)
        };
        per_class.push(ClassMetrics {
            precision,
            sensitivity,
            specificity,
            f1,
        });
    }

    let accuracy = cm.trace() as f64 / total as f64;
    let (precision, sensitivity, specificity, f1) = match averaging {
        Averaging::Macro => {
            let mean = |f: fn(&ClassMetrics) -> f64| {
                per_class.iter().map(f).sum::<f64>() / k as f64
            };
            (
                mean(|m| m.precision),
                mean(|m| m.sensitivity),
                mean(|m| m.specificity),
                mean(|m| m.f1),
            )
        }
        Averaging::Micro => {
            // Pooled one-vs-rest counts. Precision, recall and F1 all equal
            // accuracy for single-label classification.
            let mut agg = (0u64, 0u64, 0u64, 0u64);
            for c in 0..k {
                let (tp, fp, fn_, tn) = cm.class_counts(c);
                agg = (agg.0 + tp, agg.1 + fp, agg.2 + fn_, agg.3 + tn);
            }
            let (tp, fp, fn_, tn) = agg;
            let p = tp as f64 / (tp + fp) as f64;
            let r = tp as f64 / (tp + fn_) as f64;
            let s = tn as f64 / (tn + fp) as f64;
            let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            (p, r, s, f1)
        }
        Averaging::Weighted => {
            let weights: Vec<f64> = (0..k)
                .map(|c| {
                    let (tp, _, fn_, _) = cm.class_counts(c);
                    (tp + fn_) as f64 / total as f64
                })
                .collect();
            let wmean = |f: fn(&ClassMetrics) -> f64| {
                per_class
                    .iter()
                    .zip(&weights)
                    .map(|(m, w)| f(m) * w)
                    .sum::<f64>()
            };
            (
                wmean(|m| m.precision),
                wmean(|m| m.sensitivity),
                wmean(|m| m.specificity),
                wmean(|m| m.f1),
            )
        }
    };

    Ok(MetricsReport {
        per_class,
        precision,
        sensitivity,
        specificity,
        accuracy,
        f1,
        averaging,
    })
}

impl MetricsReport {
    /// The five report columns in table order.
    pub fn row(&self) -> [f64; 5] {
        [
            self.precision,
            self.sensitivity,
            self.specificity,
            self.accuracy,
            self.f1,
        ]
    }

    pub const COLUMNS: [&'static str; 5] =
        ["Precision", "Sensitivity", "Specificity", "Accuracy", "F1 score"];
}
