//! Confusion matrix and per-class / support-weighted classification report.
//!
//! Per-class precision is also exposed under the alias `paper_accuracy`:
//! published tables built from the same tool often label that column
//! "accuracy".

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};
use crate::DOCUMENT_VERSION;

/// 2x2 counts indexed `[actual][predicted]`, class order
/// (parasitized, uninfected).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 2]; 2],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn get(&self, actual: Label, predicted: Label) -> u64 {
        self.counts[actual.index()][predicted.index()]
    }
}

pub fn confusion(predictions: &[Label], truths: &[Label]) -> Result<ConfusionMatrix> {
    if predictions.len() != truths.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} ground-truth labels",
            predictions.len(),
            truths.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (p, t) in predictions.iter().zip(truths) {
        cm.counts[t.index()][p.index()] += 1;
    }
    Ok(cm)
}

/// Like [`confusion`] but from class names, rejecting unknown labels.
pub fn confusion_from_names(predictions: &[&str], truths: &[&str]) -> Result<ConfusionMatrix> {
    let parse = |names: &[&str]| {
        names
            .iter()
            .map(|n| Label::from_name(n).ok_or_else(|| Error::Data(format!("unknown label {n:?}"))))
            .collect::<Result<Vec<_>>>()
    };
    confusion(&parse(predictions)?, &parse(truths)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: Label,
    pub precision: f64,
    /// Same value as `precision`.
    pub paper_accuracy: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AverageMetrics {
    pub precision: f64,
    pub paper_accuracy: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub version: u32,
    pub classes: Vec<ClassMetrics>,
    pub weighted_avg: AverageMetrics,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Per-class precision/recall/F1 (0.0 on zero division), support-weighted
/// averages and overall accuracy.
pub fn classification_report(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Data("confusion matrix is empty".into()));
    }
    let classes: Vec<ClassMetrics> = Label::ALL
        .into_iter()
        .map(|label| {
            let c = label.index();
            let tp = cm.counts[c][c];
            let predicted: u64 = (0..2).map(|a| cm.counts[a][c]).sum();
            let support: u64 = cm.counts[c].iter().sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            ClassMetrics {
                label,
                precision,
                paper_accuracy: precision,
                recall,
                f1: harmonic(precision, recall),
                support,
            }
        })
        .collect();
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        classes.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / total as f64
    };
    let precision = weighted(|c| c.precision);
    let weighted_avg = AverageMetrics {
        precision,
        paper_accuracy: precision,
        recall: weighted(|c| c.recall),
        f1: weighted(|c| c.f1),
    };
    let correct: u64 = (0..2).map(|i| cm.counts[i][i]).sum();
    Ok(MetricsReport {
        version: DOCUMENT_VERSION,
        classes,
        weighted_avg,
        accuracy: ratio(correct, total),
        confusion: *cm,
    })
}

impl MetricsReport {
    pub fn class(&self, label: Label) -> &ClassMetrics {
        &self.classes[label.index()]
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<18}{:>11}{:>10}{:>10}{:>10}", "class", "precision*", "recall", "f1", "support")?;
        for c in &self.classes {
            writeln!(
                f,
                "{:<18}{:>11.4}{:>10.4}{:>10.4}{:>10}",
                c.label.name(),
                c.precision,
                c.recall,
                c.f1,
                c.support
            )?;
        }
        let w = &self.weighted_avg;
        let total: u64 = self.classes.iter().map(|c| c.support).sum();
        writeln!(
            f,
            "{:<18}{:>11.4}{:>10.4}{:>10.4}{:>10}",
            "weighted avg", w.precision, w.recall, w.f1, total
        )?;
        writeln!(f, "{:<18}{:>11.4}", "accuracy", self.accuracy)?;
        write!(f, "* precision (some reports label this column 'accuracy')")
    }
}
