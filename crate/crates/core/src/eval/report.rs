//! Headline metrics and plot-ready CSV emitters.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::bootstrap::{bootstrap_ci, MetricEstimate};
use super::calibration::CalibrationBin;
use super::metrics::{cohens_kappa, confusion, roc_auc, ConfusionMatrix};
use crate::error::{Error, Result};

/// One evaluated slide (primary scan).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideOutcome {
    pub slide_id: String,
    pub label: bool,
    pub borderline: bool,
    pub score: f64,
    pub call: bool,
}

fn pick<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

/// AUC, kappa, sensitivity and specificity, each with a bootstrap interval
/// from the same resamples.
pub fn headline_metrics(outcomes: &[SlideOutcome], n_boot: usize, seed: u64) -> Result<BTreeMap<String, MetricEstimate>> {
    if outcomes.is_empty() {
        return Err(Error::invalid("no slides to evaluate"));
    }
    let scores: Vec<f64> = outcomes.iter().map(|o| o.score).collect();
    let labels: Vec<bool> = outcomes.iter().map(|o| o.label).collect();
    let calls: Vec<bool> = outcomes.iter().map(|o| o.call).collect();
    let n = outcomes.len();
    let mut out = BTreeMap::new();
    let auc = |idx: &[usize]| roc_auc(&pick(&scores, idx), &pick(&labels, idx)).ok();
    let kappa = |idx: &[usize]| cohens_kappa(&pick(&calls, idx), &pick(&labels, idx)).ok();
    let cm = |idx: &[usize]| confusion(&pick(&calls, idx), &pick(&labels, idx)).ok();
    let sens = |idx: &[usize]| cm(idx)?.sensitivity();
    let spec = |idx: &[usize]| cm(idx)?.specificity();
    out.insert("auc".into(), bootstrap_ci("auc", n, auc, n_boot, seed)?.estimate);
    out.insert("kappa".into(), bootstrap_ci("kappa", n, kappa, n_boot, seed)?.estimate);
    out.insert("sensitivity".into(), bootstrap_ci("sensitivity", n, sens, n_boot, seed)?.estimate);
    out.insert("specificity".into(), bootstrap_ci("specificity", n, spec, n_boot, seed)?.estimate);
    Ok(out)
}

pub fn roc_csv(points: &[(f64, f64, f64)]) -> String {
    let mut s = String::from("threshold,fpr,tpr\n");
    for (t, f, p) in points {
        let _ = writeln!(s, "{t},{f},{p}");
    }
    s
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn calibration_csv(bins: &[CalibrationBin]) -> String {
    let mut s = String::from("bin_center,mean_predicted,observed,count\n");
    for b in bins {
        let _ = writeln!(s, "{},{},{},{}", b.center, opt(b.mean_predicted), opt(b.observed), b.count);
    }
    s
}

pub fn confusion_csv(cm: &ConfusionMatrix) -> String {
    format!("tp,fp,tn,fn\n{},{},{},{}\n", cm.tp, cm.fp, cm.tn, cm.fn_)
}

pub fn matrix_csv(ids: &[String], m: &[Vec<f64>]) -> String {
    let mut s = String::from("rater");
    for id in ids {
        s.push(',');
        s.push_str(id);
    }
    s.push('\n');
    for (id, row) in ids.iter().zip(m) {
        s.push_str(id);
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}
