//! Reliability-diagram bins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub center: f64,
    /// Mean score in the bin; `None` for empty bins.
    pub mean_predicted: Option<f64>,
    /// Fraction of positives in the bin; `None` for empty bins.
    pub observed: Option<f64>,
    pub count: usize,
}

/// Equal-width bins on [0, 1]; a score of exactly 1 falls in the last bin.
pub fn calibration_curve(scores: &[f64], labels: &[bool], bins: usize) -> Result<Vec<CalibrationBin>> {
    if bins == 0 {
        return Err(Error::invalid("need at least one bin"));
    }
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::invalid(format!("score {s} outside [0, 1]")));
    }
    let mut sum = vec![0.0; bins];
    let mut pos = vec![0usize; bins];
    let mut count = vec![0usize; bins];
    for (&s, &y) in scores.iter().zip(labels) {
        let b = ((s * bins as f64) as usize).min(bins - 1);
        sum[b] += s;
        pos[b] += y as usize;
        count[b] += 1;
    }
    Ok((0..bins)
        .map(|b| CalibrationBin {
            center: (b as f64 + 0.5) / bins as f64,
            mean_predicted: (count[b] > 0).then(|| sum[b] / count[b] as f64),
            observed: (count[b] > 0).then(|| pos[b] as f64 / count[b] as f64),
            count: count[b],
        })
        .collect())
}

/// Largest |observed - mean predicted| over occupied bins.
pub fn max_calibration_gap(bins: &[CalibrationBin]) -> f64 {
    bins.iter()
        .filter_map(|b| Some((b.observed? - b.mean_predicted?).abs()))
        .fold(0.0, f64::max)
}
