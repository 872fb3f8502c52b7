//! Classification and regression metrics.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no samples")]
    Empty,
    #[error("{truth} true labels but {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("label {label} outside 0..{k}")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("{0} class names for a {1}-class matrix")]
    LabelNames(usize, usize),
    #[error("test fraction {0} outside (0, 1)")]
    BadFraction(f64),
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|c| self.counts[c][c]).sum()
    }
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<ConfusionMatrix, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch {
            truth: y_true.len(),
            pred: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if let Some(&label) = [t, p].iter().find(|l| **l >= k) {
            return Err(EvalError::LabelOutOfRange { label, k });
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// A ratio that falls back to zero when its denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub undefined: bool,
}

impl Metric {
    fn ratio(num: f64, den: f64) -> Metric {
        if den == 0.0 {
            Metric { value: 0.0, undefined: true }
        } else {
            Metric { value: num / den, undefined: false }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: Metric,
    pub recall: Metric,
    pub f1: Metric,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classes: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: Averages,
    /// Weighted by true-class support.
    pub weighted_avg: Averages,
    pub total: u64,
    pub confusion: ConfusionMatrix,
}

/// Report with classes named by index.
pub fn report(cm: &ConfusionMatrix) -> ClassificationReport {
    let names: Vec<String> = (0..cm.k()).map(|c| c.to_string()).collect();
    report_with_labels(cm, &names).expect("one name per class")
}

pub fn report_with_labels<S: AsRef<str>>(
    cm: &ConfusionMatrix,
    labels: &[S],
) -> Result<ClassificationReport, EvalError> {
    let k = cm.k();
    if labels.len() != k {
        return Err(EvalError::LabelNames(labels.len(), k));
    }
    let classes: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = cm.counts[c][c] as f64;
            let precision = Metric::ratio(tp, cm.col_sum(c) as f64);
            let recall = Metric::ratio(tp, cm.row_sum(c) as f64);
            let f1 = Metric::ratio(
                2.0 * precision.value * recall.value,
                precision.value + recall.value,
            );
            ClassMetrics {
                label: labels[c].as_ref().to_string(),
                precision,
                recall,
                f1,
                support: cm.row_sum(c),
            }
        })
        .collect();
    let total = cm.total();
    let average = |weight: &dyn Fn(&ClassMetrics) -> f64| {
        let w: f64 = classes.iter().map(weight).sum();
        let avg = |m: &dyn Fn(&ClassMetrics) -> f64| {
            if w == 0.0 {
                0.0
            } else {
                classes.iter().map(|c| weight(c) * m(c)).sum::<f64>() / w
            }
        };
        Averages {
            precision: avg(&|c| c.precision.value),
            recall: avg(&|c| c.recall.value),
            f1: avg(&|c| c.f1.value),
        }
    };
    Ok(ClassificationReport {
        accuracy: if total == 0 { 0.0 } else { cm.trace() as f64 / total as f64 },
        macro_avg: average(&|_| 1.0),
        weighted_avg: average(&|c| c.support as f64),
        classes,
        total,
        confusion: cm.clone(),
    })
}

impl ClassificationReport {
    /// Fixed-width table: per-class rows, then accuracy, macro and
    /// weighted averages.
    pub fn to_text(&self) -> String {
        let width = self
            .classes
            .iter()
            .map(|c| c.label.len())
            .chain([12])
            .max()
            .unwrap_or(12);
        let mut out = String::new();
        let _ = writeln!(out, "{:>width$} {:>10} {:>10} {:>10} {:>10}", "", "precision", "recall", "f1-score", "support");
        out.push('\n');
        for c in &self.classes {
            let _ = writeln!(
                out,
                "{:>width$} {:>10.2} {:>10.2} {:>10.2} {:>10}",
                c.label, c.precision.value, c.recall.value, c.f1.value, c.support
            );
        }
        out.push('\n');
        let _ = writeln!(out, "{:>width$} {:>10} {:>10} {:>10.2} {:>10}", "accuracy", "", "", self.accuracy, self.total);
        for (name, a) in [("macro avg", self.macro_avg), ("weighted avg", self.weighted_avg)] {
            let _ = writeln!(
                out,
                "{:>width$} {:>10.2} {:>10.2} {:>10.2} {:>10}",
                name, a.precision, a.recall, a.f1, self.total
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub rmse: f64,
    /// `None` when the true values are constant.
    pub r2: Option<f64>,
}

pub fn regression(y_true: &[f64], y_pred: &[f64]) -> Result<RegressionMetrics, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch {
            truth: y_true.len(),
            pred: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = y_true.len() as f64;
    let errors: Vec<f64> = y_true.iter().zip(y_pred).map(|(t, p)| t - p).collect();
    let mae = errors.iter().map(|e| e.abs()).sum::<f64>() / n;
    let ss_res: f64 = errors.iter().map(|e| e * e).sum();
    let rmse = (ss_res / n).sqrt();
    let mean = y_true.iter().sum::<f64>() / n;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean) * (y - mean)).sum();
    let r2 = (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot);
    Ok(RegressionMetrics { mae, rmse, r2 })
}

/// Per-class shuffled split. Each class sends `round(n_c * test_fraction)`
/// of its members to the test side. Both index lists are sorted.
pub fn stratified_split(
    labels: &[usize],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), EvalError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(EvalError::BadFraction(test_fraction));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..k {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        let n_test = (members.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
