//! Segmentation quality metrics against a ground-truth mask.
//!
//! Pixels are compared one-to-one between a predicted and a reference mask
//! (label 1 = nodule). From the resulting confusion counts we report
//! sensitivity, specificity, accuracy, Dice coefficient, and Jaccard index.
//! Every ratio uses the convention 0/0 = 1: an empty denominator means
//! there was nothing to get wrong.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::LabelMask;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
}

/// Pixel-level confusion counts; label 1 is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    #[serde(rename = "tp")]
    pub true_positive: u64,
    #[serde(rename = "fp")]
    pub false_positive: u64,
    #[serde(rename = "fn")]
    pub false_negative: u64,
    #[serde(rename = "tn")]
    pub true_negative: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_positive + self.false_positive + self.false_negative + self.true_negative
    }
}

/// Confusion counts plus the derived ratio metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub counts: ConfusionCounts,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub dice: f64,
    pub jaccard: f64,
}

/// Count agreements and disagreements between a prediction and the truth.
pub fn confusion(pred: &LabelMask, truth: &LabelMask) -> Result<ConfusionCounts, MetricsError> {
    if pred.width() != truth.width() || pred.height() != truth.height() {
        return Err(MetricsError::DimensionMismatch(
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height(),
        ));
    }
    let mut counts = ConfusionCounts {
        true_positive: 0,
        false_positive: 0,
        false_negative: 0,
        true_negative: 0,
    };
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        match (p, t) {
            (1, 1) => counts.true_positive += 1,
            (1, 0) => counts.false_positive += 1,
            (0, 1) => counts.false_negative += 1,
            _ => counts.true_negative += 1,
        }
    }
    Ok(counts)
}

/// A ratio with the 0/0 = 1 convention.
fn ratio(numerator: u64, denominator: u64) -> f64 {
    if denominator == 0 {
        1.0
    } else {
        numerator as f64 / denominator as f64
    }
}

/// Derive the ratio metrics from confusion counts.
pub fn compute_metrics(counts: ConfusionCounts) -> MetricsReport {
    let ConfusionCounts {
        true_positive: tp,
        false_positive: fp,
        false_negative: fneg,
        true_negative: tn,
    } = counts;
    MetricsReport {
        counts,
        sensitivity: ratio(tp, tp + fneg),
        specificity: ratio(tn, tn + fp),
        accuracy: ratio(tp + tn, counts.total()),
        dice: ratio(2 * tp, 2 * tp + fp + fneg),
        jaccard: ratio(tp, tp + fp + fneg),
    }
}

/// Compare a prediction against the truth and report all metrics.
pub fn evaluate(pred: &LabelMask, truth: &LabelMask) -> Result<MetricsReport, MetricsError> {
    Ok(compute_metrics(confusion(pred, truth)?))
}
