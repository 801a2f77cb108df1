use serde::{Deserialize, Serialize};

use super::{EvalError, Result};

/// One-vs-rest counts for a single class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Number of true members of the class.
    pub fn support(&self) -> u64 {
        self.tp + self.fn_
    }
}

/// Per-class counts for `classes` classes.
pub fn confusion(preds: &[usize], labels: &[usize], classes: usize) -> Result<Vec<ConfusionCounts>> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            left: preds.len(),
            right: labels.len(),
        });
    }
    if let Some(&v) = preds.iter().chain(labels).find(|&&v| v >= classes) {
        return Err(EvalError::LabelOutOfRange { label: v, classes });
    }
    let mut out = vec![ConfusionCounts::default(); classes];
    for (c, counts) in out.iter_mut().enumerate() {
        for (&p, &y) in preds.iter().zip(labels) {
            match (p == c, y == c) {
                (true, true) => counts.tp += 1,
                (true, false) => counts.fp += 1,
                (false, true) => counts.fn_ += 1,
                (false, false) => counts.tn += 1,
            }
        }
    }
    Ok(out)
}

/// Precision, recall and F1. A zero denominator yields 0 and sets `degenerate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: bool,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn prf1(c: &ConfusionCounts) -> Prf1 {
    let (precision, dp) = ratio(c.tp, c.tp + c.fp);
    let (recall, dr) = ratio(c.tp, c.tp + c.fn_);
    Prf1 {
        precision,
        recall,
        f1: f1_score(precision, recall),
        degenerate: dp || dr || precision + recall == 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averaged {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: bool,
    pub support: u64,
    pub counts: ConfusionCounts,
}

/// Per-class metrics with macro (unweighted class mean) and micro (pooled
/// counts) averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub accuracy: f64,
    pub classes: Vec<ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: Averaged,
    #[serde(rename = "micro")]
    pub micro_avg: Averaged,
    /// Per-class one-vs-rest ROC AUC, when scores were supplied.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub roc_auc: Vec<Option<f64>>,
    /// Per-class average precision, when scores were supplied.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub average_precision: Vec<Option<f64>>,
}

impl MetricsReport {
    pub fn from_predictions(
        preds: &[usize],
        labels: &[usize],
        classes: usize,
        names: &[String],
    ) -> Result<Self> {
        let counts = confusion(preds, labels, classes)?;
        let per: Vec<ClassMetrics> = counts
            .iter()
            .enumerate()
            .map(|(c, k)| {
                let m = prf1(k);
                ClassMetrics {
                    class: c,
                    name: names.get(c).cloned(),
                    precision: m.precision,
                    recall: m.recall,
                    f1: m.f1,
                    degenerate: m.degenerate,
                    support: k.support(),
                    counts: *k,
                }
            })
            .collect();
        let n = classes.max(1) as f64;
        let macro_avg = Averaged {
            precision: per.iter().map(|m| m.precision).sum::<f64>() / n,
            recall: per.iter().map(|m| m.recall).sum::<f64>() / n,
            f1: per.iter().map(|m| m.f1).sum::<f64>() / n,
        };
        let pooled = counts.iter().fold(ConfusionCounts::default(), |a, k| ConfusionCounts {
            tp: a.tp + k.tp,
            fp: a.fp + k.fp,
            fn_: a.fn_ + k.fn_,
            tn: a.tn + k.tn,
        });
        let micro = prf1(&pooled);
        let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(MetricsReport {
            samples: preds.len(),
            accuracy: if preds.is_empty() { 0.0 } else { correct as f64 / preds.len() as f64 },
            classes: per,
            macro_avg,
            micro_avg: Averaged {
                precision: micro.precision,
                recall: micro.recall,
                f1: micro.f1,
            },
            roc_auc: Vec::new(),
            average_precision: Vec::new(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Index of the largest entry in each row (first on ties).
pub fn argmax_rows(probs: &[Vec<f64>]) -> Vec<usize> {
    probs
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(0, |b, (i, &v)| if v > row[b] { i } else { b })
        })
        .collect()
}
