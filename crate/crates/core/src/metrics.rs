//! Binary classification metrics and calibration diagnostics.
//!
//! Calibration is measured on the positive-class probability: each bin
//! compares the mean predicted probability with the observed frequency of
//! the positive class (a reliability diagram).

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub positive_class: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Confusion counts and derived metrics against `positive_class`.
///
/// Zero denominators yield 0 for precision or recall, with a warning.
pub fn confusion_metrics(
    predicted: &[usize],
    gold: &[usize],
    positive_class: usize,
) -> Result<MetricsReport, MetricsError> {
    if predicted.len() != gold.len() {
        return Err(MetricsError::LengthMismatch {
            left: predicted.len(),
            right: gold.len(),
        });
    }
    if predicted.is_empty() {
        return Err(MetricsError::Empty);
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &g) in predicted.iter().zip(gold) {
        match (p == positive_class, g == positive_class) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let mut warnings = Vec::new();
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        warnings.push("no positive predictions; precision set to 0".to_string());
        0.0
    };
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        warnings.push("no positive gold labels; recall set to 0".to_string());
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    for w in &warnings {
        log::warn!("{w}");
    }
    let correct = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(MetricsReport {
        accuracy: correct as f64 / predicted.len() as f64,
        precision,
        recall,
        f1,
        tp,
        fp,
        fn_,
        tn,
        positive_class,
        warnings,
    })
}

fn check_probs(probs: &[f64], gold: &[bool]) -> Result<(), MetricsError> {
    if probs.len() != gold.len() {
        return Err(MetricsError::LengthMismatch {
            left: probs.len(),
            right: gold.len(),
        });
    }
    if probs.is_empty() {
        return Err(MetricsError::Empty);
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(MetricsError::InvalidInput(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

/// Mean squared error between positive-class probability and outcome.
pub fn brier_score(positive_probs: &[f64], gold: &[bool]) -> Result<f64, MetricsError> {
    check_probs(positive_probs, gold)?;
    let total: f64 = positive_probs
        .iter()
        .zip(gold)
        .map(|(&p, &y)| {
            let d = p - if y { 1.0 } else { 0.0 };
            d * d
        })
        .sum();
    Ok(total / positive_probs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lower: f64,
    pub upper: f64,
    /// Mean predicted probability in the bin (0 for empty bins).
    pub confidence: f64,
    /// Observed positive frequency in the bin (0 for empty bins).
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub brier: f64,
    pub ece: f64,
    pub bins: Vec<ReliabilityBin>,
}

/// Bin index for equal-width, right-closed bins; `p = 0` lands in the first bin.
fn bin_index(p: f64, bins: usize) -> usize {
    let scaled = p * bins as f64;
    // 0.3 * 10 = 3.0000000000000004 must stay in (0.2, 0.3]
    let idx = (scaled - 1e-9).ceil() as isize - 1;
    idx.clamp(0, bins as isize - 1) as usize
}

pub fn calibration_report(
    positive_probs: &[f64],
    gold: &[bool],
    bins: usize,
) -> Result<CalibrationReport, MetricsError> {
    if bins < 2 {
        return Err(MetricsError::InvalidInput(format!("need at least 2 bins, got {bins}")));
    }
    check_probs(positive_probs, gold)?;
    let mut sum_p = vec![0.0; bins];
    let mut positives = vec![0usize; bins];
    let mut counts = vec![0usize; bins];
    for (&p, &y) in positive_probs.iter().zip(gold) {
        let b = bin_index(p, bins);
        sum_p[b] += p;
        positives[b] += usize::from(y);
        counts[b] += 1;
    }
    let n = positive_probs.len() as f64;
    let width = 1.0 / bins as f64;
    let mut ece = 0.0;
    let bins = (0..bins)
        .map(|b| {
            let (confidence, accuracy) = if counts[b] > 0 {
                let c = counts[b] as f64;
                (sum_p[b] / c, positives[b] as f64 / c)
            } else {
                (0.0, 0.0)
            };
            ece += counts[b] as f64 / n * (confidence - accuracy).abs();
            ReliabilityBin {
                lower: b as f64 * width,
                upper: (b + 1) as f64 * width,
                confidence,
                accuracy,
                count: counts[b],
            }
        })
        .collect();
    Ok(CalibrationReport {
        brier: brier_score(positive_probs, gold)?,
        ece,
        bins,
    })
}

/// Shorthand for the ECE with the default bin count.
pub fn expected_calibration_error(positive_probs: &[f64], gold: &[bool]) -> Result<f64, MetricsError> {
    Ok(calibration_report(positive_probs, gold, DEFAULT_BINS)?.ece)
}
