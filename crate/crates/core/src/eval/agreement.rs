//! Inter-rater and cross-scanner agreement.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bootstrap::{bootstrap_ci, MetricEstimate};
use super::metrics::cohens_kappa;
use crate::error::{Error, Result};

/// Binary calls of several raters on a common slide set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaterPanel {
    pub rater_ids: Vec<String>,
    /// `calls[r][s]`: rater `r` on slide `s`.
    pub calls: Vec<Vec<bool>>,
    /// Raters that may serve as comparators (pathologists, not the model).
    pub comparator: Vec<bool>,
    pub reference: Option<String>,
}

impl RaterPanel {
    pub fn validate(&self) -> Result<()> {
        if self.rater_ids.len() != self.calls.len() || self.rater_ids.len() != self.comparator.len() {
            return Err(Error::invalid("rater ids, calls and comparator flags differ in length"));
        }
        if let Some(first) = self.calls.first() {
            if first.is_empty() || self.calls.iter().any(|c| c.len() != first.len()) {
                return Err(Error::invalid("all raters must cover the same nonempty slide set"));
            }
        }
        Ok(())
    }

    pub fn index_of(&self, rater: &str) -> Option<usize> {
        self.rater_ids.iter().position(|r| r == rater)
    }

    pub fn n_slides(&self) -> usize {
        self.calls.first().map_or(0, |c| c.len())
    }
}

fn kappa_matrix(calls: &[Vec<bool>]) -> Result<Vec<Vec<f64>>> {
    let r = calls.len();
    let mut m = vec![vec![0.0; r]; r];
    for i in 0..r {
        for j in i..r {
            let k = cohens_kappa(&calls[i], &calls[j])?;
            m[i][j] = k;
            m[j][i] = k;
        }
    }
    Ok(m)
}

/// Symmetric matrix of pairwise kappas.
pub fn pairwise_kappa_matrix(panel: &RaterPanel) -> Result<Vec<Vec<f64>>> {
    panel.validate()?;
    if panel.rater_ids.len() < 3 {
        return Err(Error::invalid("pairwise agreement needs at least three raters"));
    }
    kappa_matrix(&panel.calls)
}

fn subset(calls: &[bool], idx: &[usize]) -> Vec<bool> {
    idx.iter().map(|&i| calls[i]).collect()
}

/// Mean kappa of `target` against every comparator rater other than itself,
/// with a slide-level bootstrap interval.
pub fn mean_pairwise_kappa(panel: &RaterPanel, target: &str, n_boot: usize, seed: u64) -> Result<MetricEstimate> {
    panel.validate()?;
    if panel.rater_ids.len() < 3 {
        return Err(Error::invalid("pairwise agreement needs at least three raters"));
    }
    let t = panel
        .index_of(target)
        .ok_or_else(|| Error::invalid(format!("unknown rater {target}")))?;
    let others: Vec<usize> = (0..panel.rater_ids.len())
        .filter(|&r| r != t && panel.comparator[r])
        .collect();
    if others.is_empty() {
        return Err(Error::invalid("no comparator raters"));
    }
    let metric = |idx: &[usize]| {
        let tc = subset(&panel.calls[t], idx);
        let mut s = 0.0;
        for &o in &others {
            s += cohens_kappa(&tc, &subset(&panel.calls[o], idx)).ok()?;
        }
        Some(s / others.len() as f64)
    };
    Ok(bootstrap_ci(&format!("mean_pairwise_kappa_{target}"), panel.n_slides(), metric, n_boot, seed)?.estimate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossScannerAgreement {
    pub scanners: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
    /// Mean kappa of each scanner against all others.
    pub mean_per_scanner: Vec<f64>,
}

impl CrossScannerAgreement {
    pub fn min_pairwise(&self) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..self.scanners.len() {
            for j in i + 1..self.scanners.len() {
                m = m.min(self.matrix[i][j]);
            }
        }
        m
    }
}

/// Pairwise kappa between model calls on different scans of the same slides.
pub fn cross_scanner_agreement(preds: &BTreeMap<String, Vec<bool>>) -> Result<CrossScannerAgreement> {
    if preds.len() < 2 {
        return Err(Error::invalid("cross-scanner agreement needs at least two scanners"));
    }
    let calls: Vec<Vec<bool>> = preds.values().cloned().collect();
    let n = calls[0].len();
    if n == 0 || calls.iter().any(|c| c.len() != n) {
        return Err(Error::invalid("every scanner needs a prediction for every shared slide"));
    }
    let matrix = kappa_matrix(&calls)?;
    let r = calls.len();
    let mean_per_scanner = (0..r)
        .map(|i| (0..r).filter(|&j| j != i).map(|j| matrix[i][j]).sum::<f64>() / (r - 1) as f64)
        .collect();
    Ok(CrossScannerAgreement {
        scanners: preds.keys().cloned().collect(),
        matrix,
        mean_per_scanner,
    })
}
