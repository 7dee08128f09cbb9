//! Prevalence of borderline slides among false positives versus true
//! negatives.

use serde::{Deserialize, Serialize};

use super::fisher::fisher_exact;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BorderlineAnalysis {
    pub n_fp: usize,
    pub n_tn: usize,
    pub fp_borderline: usize,
    pub tn_borderline: usize,
    /// `None` when there are no false positives.
    pub fp_borderline_rate: Option<f64>,
    /// `None` when there are no true negatives.
    pub tn_borderline_rate: Option<f64>,
    pub p_value: f64,
}

/// Builds the (FP, TN) x (borderline, not) table over reference-negative
/// slides and tests it with Fisher's exact test.
pub fn borderline_analysis(preds: &[bool], labels: &[bool], borderline: &[bool]) -> Result<BorderlineAnalysis> {
    if preds.len() != labels.len() || preds.len() != borderline.len() {
        return Err(Error::invalid("predictions, labels and borderline flags differ in length"));
    }
    let (mut fp_b, mut fp_n, mut tn_b, mut tn_n) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..preds.len() {
        if labels[i] {
            continue;
        }
        match (preds[i], borderline[i]) {
            (true, true) => fp_b += 1,
            (true, false) => fp_n += 1,
            (false, true) => tn_b += 1,
            (false, false) => tn_n += 1,
        }
    }
    let n_fp = (fp_b + fp_n) as usize;
    let n_tn = (tn_b + tn_n) as usize;
    Ok(BorderlineAnalysis {
        n_fp,
        n_tn,
        fp_borderline: fp_b as usize,
        tn_borderline: tn_b as usize,
        fp_borderline_rate: (n_fp > 0).then(|| fp_b as f64 / n_fp as f64),
        tn_borderline_rate: (n_tn > 0).then(|| tn_b as f64 / n_tn as f64),
        p_value: fisher_exact([[fp_b, fp_n], [tn_b, tn_n]])?,
    })
}
