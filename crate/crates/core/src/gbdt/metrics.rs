use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Auc,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

impl MetricKind {
    pub fn direction(self) -> Direction {
        match self {
            MetricKind::Auc => Direction::HigherBetter,
            MetricKind::Mse => Direction::LowerBetter,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Auc => "auc",
            MetricKind::Mse => "mse",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Auc => "AUC",
            MetricKind::Mse => "MSE",
        })
    }
}

/// A metric value together with the direction in which it improves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub kind: MetricKind,
    pub value: f64,
    pub direction: Direction,
}

impl MetricScore {
    pub fn new(kind: MetricKind, value: f64) -> Self {
        MetricScore {
            kind,
            value,
            direction: kind.direction(),
        }
    }

    /// Strict improvement in this metric's direction. Equal values are not
    /// better.
    pub fn is_better_than(&self, other: &MetricScore) -> bool {
        debug_assert_eq!(self.kind, other.kind);
        match self.direction {
            Direction::HigherBetter => self.value > other.value,
            Direction::LowerBetter => self.value < other.value,
        }
    }

    /// Orders scores so that `Less` means "better".
    pub fn cmp_quality(&self, other: &MetricScore) -> Ordering {
        let ord = self.value.total_cmp(&other.value);
        match self.direction {
            Direction::HigherBetter => ord.reverse(),
            Direction::LowerBetter => ord,
        }
    }
}

impl fmt::Display for MetricScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:.4}", self.kind, self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("length mismatch: {scores} scores vs {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no values to score")]
    Empty,
    #[error("AUC needs both classes; found {positives} positives and {negatives} negatives")]
    OneClass { positives: usize, negatives: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
}

fn check_inputs(a: &[f64], b: &[f64]) -> Result<(), MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch {
            scores: a.len(),
            labels: b.len(),
        });
    }
    if a.is_empty() {
        return Err(MetricError::Empty);
    }
    if let Some(i) = a.iter().chain(b).position(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite(i % a.len()));
    }
    Ok(())
}

/// Area under the ROC curve via the rank statistic: the share of
/// positive/negative pairs ranked correctly, ties counting one half.
/// Labels greater than 0.5 are positive.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<MetricScore, MetricError> {
    check_inputs(scores, labels)?;
    let positives = labels.iter().filter(|&&y| y > 0.5).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::OneClass {
            positives,
            negatives,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of midranks of the positives (Mann-Whitney U).
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_block = order[i..=j].iter().filter(|&&k| labels[k] > 0.5).count();
        rank_sum += midrank * pos_in_block as f64;
        i = j + 1;
    }
    let p = positives as f64;
    let n = negatives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(MetricScore::new(MetricKind::Auc, u / (p * n)))
}

/// Mean squared error.
pub fn mse(predictions: &[f64], targets: &[f64]) -> Result<MetricScore, MetricError> {
    check_inputs(predictions, targets)?;
    let total: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(MetricScore::new(
        MetricKind::Mse,
        total / predictions.len() as f64,
    ))
}
