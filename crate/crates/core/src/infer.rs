//! Frozen-model ensemble inference with test-time augmentation.

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::Dihedral;
use crate::error::{Error, Result};
use crate::nn::descriptor::{patch_descriptor, Descriptor};
use crate::nn::model::{slide_prob, ModelParams};
use crate::platt::CalibrationParams;

pub const OPERATING_POINT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferConfig {
    pub n_views: usize,
    /// Apply Platt scaling to the ensemble mean.
    pub calibrate: bool,
    /// Threshold the raw ensemble score instead of the calibrated one.
    pub threshold_raw: bool,
    pub operating_point: f64,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            n_views: 5,
            calibrate: true,
            threshold_raw: false,
            operating_point: OPERATING_POINT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlidePrediction {
    pub slide_id: String,
    pub scan_id: String,
    pub raw_score: f64,
    pub calibrated_score: f64,
    pub label: bool,
    /// `scores[model][view]`.
    pub scores: Vec<Vec<f64>>,
}

/// Label 1 iff `score >= operating_point`.
pub fn classify(score: f64, operating_point: f64) -> bool {
    score >= operating_point
}

/// Arithmetic mean of every entry. Values are summed in ascending order so
/// the result is bit-identical under any permutation of models or views, and
/// a residual pass corrects the rounding of the first estimate (a constant
/// matrix yields exactly that constant).
pub fn soft_vote(scores: &[Vec<f64>]) -> Result<f64> {
    let mut all: Vec<f64> = scores.iter().flatten().copied().collect();
    if all.is_empty() {
        return Err(Error::invalid("no scores to aggregate"));
    }
    all.sort_by(f64::total_cmp);
    let n = all.len() as f64;
    let m0 = all.iter().sum::<f64>() / n;
    let r: f64 = all.iter().map(|x| x - m0).sum();
    Ok(m0 + r / n)
}

/// Descriptors of every patch under every view.
pub fn view_descriptors(patches: &[RgbImage], views: &[Dihedral]) -> Vec<Vec<Descriptor>> {
    views
        .iter()
        .map(|v| {
            patches
                .par_iter()
                .map(|p| {
                    if v.is_identity() {
                        patch_descriptor(p)
                    } else {
                        patch_descriptor(&v.apply(p))
                    }
                })
                .collect()
        })
        .collect()
}

/// Score one scan with every model under every view, then aggregate and
/// calibrate.
pub fn ensemble_predict(
    slide_id: &str,
    scan_id: &str,
    view_bags: &[Vec<Descriptor>],
    models: &[ModelParams],
    platt: &CalibrationParams,
    cfg: &InferConfig,
) -> Result<SlidePrediction> {
    if models.is_empty() {
        return Err(Error::invalid("no models in the ensemble"));
    }
    if view_bags.is_empty() || view_bags.iter().any(|b| b.is_empty()) {
        return Err(Error::invalid(format!("{scan_id}: empty bag")));
    }
    let scores = models
        .iter()
        .map(|m| view_bags.iter().map(|bag| slide_prob(m, bag, None)).collect::<Result<Vec<f64>>>())
        .collect::<Result<Vec<_>>>()?;
    let raw = soft_vote(&scores)?;
    let calibrated = if cfg.calibrate { platt.apply(raw) } else { raw };
    let label = classify(if cfg.threshold_raw { raw } else { calibrated }, cfg.operating_point);
    Ok(SlidePrediction {
        slide_id: slide_id.to_string(),
        scan_id: scan_id.to_string(),
        raw_score: raw,
        calibrated_score: calibrated,
        label,
        scores,
    })
}
