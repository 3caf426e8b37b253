use serde::{Deserialize, Serialize};

use super::{Classifier, LabeledCase, N_CLASSES};
use crate::error::{Error, Result};

/// Classification metrics. Rows of `confusion` are actual classes, columns
/// predicted ones. Per-class rates are one-vs-rest and `None` when their
/// denominator is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub confusion: Vec<Vec<usize>>,
    pub accuracy: f64,
    pub sensitivity: Vec<Option<f64>>,
    pub specificity: Vec<Option<f64>>,
    pub precision: Vec<Option<f64>>,
    /// Macro one-vs-rest AUROC over classes with both positives and negatives.
    pub auroc: Option<f64>,
    /// Mean cross-entropy of the predicted probabilities.
    pub loss: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Metrics {
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Result<Self> {
        let k = confusion.len();
        if k == 0 || confusion.iter().any(|r| r.len() != k) {
            return Err(Error::invalid("confusion matrix must be square and nonempty"));
        }
        let total: usize = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::invalid("confusion matrix is empty"));
        }
        let trace: usize = (0..k).map(|i| confusion[i][i]).sum();
        let mut sensitivity = Vec::with_capacity(k);
        let mut specificity = Vec::with_capacity(k);
        let mut precision = Vec::with_capacity(k);
        for c in 0..k {
            let tp = confusion[c][c];
            let actual: usize = confusion[c].iter().sum();
            let predicted: usize = confusion.iter().map(|r| r[c]).sum();
            let tn = total + tp - actual - predicted;
            sensitivity.push(ratio(tp, actual));
            specificity.push(ratio(tn, total - actual));
            precision.push(ratio(tp, predicted));
        }
        Ok(Self {
            confusion,
            accuracy: trace as f64 / total as f64,
            sensitivity,
            specificity,
            precision,
            auroc: None,
            loss: None,
        })
    }

    /// Metrics from per-sample class probabilities; the prediction is the
    /// argmax with ties going to the lower class.
    pub fn from_scores(probs: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<Self> {
        if probs.is_empty() || probs.len() != labels.len() {
            return Err(Error::invalid("need one probability vector per label"));
        }
        let mut confusion = vec![vec![0; n_classes]; n_classes];
        let mut loss = 0.0;
        for (p, &y) in probs.iter().zip(labels) {
            if p.len() != n_classes || y >= n_classes {
                return Err(Error::invalid(format!("scores must cover {n_classes} classes")));
            }
            confusion[y][argmax(p)] += 1;
            loss -= p[y].max(f64::MIN_POSITIVE).ln();
        }
        let mut m = Self::from_confusion(confusion)?;
        m.loss = Some(loss / labels.len() as f64);
        m.auroc = macro_auroc(probs, labels, n_classes);
        Ok(m)
    }
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Area under the ROC curve of `scores` for the positive set, equal to the
/// trapezoid rule over all thresholds; tied scores count one half.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks of tie groups, 1-based
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * idx[i..=j].iter().filter(|&&t| positive[t]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

pub fn macro_auroc(probs: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Option<f64> {
    let per_class: Vec<f64> = (0..n_classes)
        .filter_map(|c| {
            let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
            let positive: Vec<bool> = labels.iter().map(|&y| y == c).collect();
            auroc(&scores, &positive)
        })
        .collect();
    (!per_class.is_empty()).then(|| per_class.iter().sum::<f64>() / per_class.len() as f64)
}

pub fn evaluate(model: &impl Classifier, test: &[LabeledCase]) -> Result<Metrics> {
    if test.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let probs = test
        .iter()
        .map(|c| model.predict_proba(&c.features))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = test.iter().map(|c| c.stage as usize).collect();
    Metrics::from_scores(&probs, &labels, N_CLASSES)
}
