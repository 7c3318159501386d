//! Confusion-matrix based classification metrics.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Index of the largest value; the lowest index wins ties.
pub fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Counts indexed `[true class][predicted class]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![vec![0; classes]; classes] }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.counts[i][i]).sum()
    }

    /// Row sums: how many samples of each true class were seen.
    pub fn support(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn metrics(&self) -> Result<Metrics> {
        let total = self.total();
        if total == 0 {
            return Err(Error::invalid("evaluate", "no samples"));
        }
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
        for c in 0..self.classes {
            let tp = self.counts[c][c];
            let predicted: u64 = (0..self.classes).map(|t| self.counts[t][c]).sum();
            let actual: u64 = self.counts[c].iter().sum();
            let p = ratio(tp, predicted);
            let r = ratio(tp, actual);
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            p_sum += p;
            r_sum += r;
            f_sum += f;
        }
        let k = self.classes as f64;
        Ok(Metrics {
            accuracy: ratio(self.trace(), total),
            precision: p_sum / k,
            recall: r_sum / k,
            f1: f_sum / k,
            confusion: self.clone(),
        })
    }
}

/// Accuracy plus macro-averaged precision, recall and F1 (0/0 counts as 0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: ConfusionMatrix,
}

pub fn metrics_from_predictions(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape { op: "evaluate", lhs: vec![predictions.len()], rhs: vec![labels.len()] });
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&p, &t) in predictions.iter().zip(labels) {
        if t >= classes || p >= classes {
            return Err(Error::LabelOutOfRange { label: t.max(p), classes, row: 0 });
        }
        cm.record(t, p);
    }
    cm.metrics()
}
