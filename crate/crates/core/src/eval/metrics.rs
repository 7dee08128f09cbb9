//! Confusion counts, sensitivity/specificity, ROC AUC and Cohen's kappa.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn n(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `None` when there are no reference positives.
    pub fn sensitivity(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    /// `None` when there are no reference negatives.
    pub fn specificity(&self) -> Option<f64> {
        let d = self.tn + self.fp;
        (d > 0).then(|| self.tn as f64 / d as f64)
    }

    pub fn accuracy(&self) -> Option<f64> {
        let n = self.n();
        (n > 0).then(|| (self.tp + self.tn) as f64 / n as f64)
    }
}

pub fn confusion(preds: &[bool], labels: &[bool]) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::invalid(format!(
            "confusion needs equal nonempty inputs, got {} predictions and {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &y) in preds.iter().zip(labels) {
        match (p, y) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

pub fn sensitivity_specificity(cm: &ConfusionMatrix) -> (Option<f64>, Option<f64>) {
    (cm.sensitivity(), cm.specificity())
}

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("AUC needs both classes"));
    }
    Ok((n_pos, n_neg))
}

/// Area under the ROC curve as the Mann-Whitney statistic with half credit
/// for ties, in O(n log n).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (n_pos, n_neg) = check_scores(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the U statistic, kept integral.
    let mut u2: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            j += 1;
        }
        let pos_here = idx[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        let neg_here = (j - i) as u128 - pos_here;
        u2 += pos_here * (2 * neg_below + neg_here);
        neg_below += neg_here;
        i = j;
    }
    Ok(u2 as f64 / (2 * n_pos as u128 * n_neg as u128) as f64)
}

/// ROC points `(fpr, tpr)` from the strictest threshold down, starting at
/// `(0, 0)` and ending at `(1, 1)`; tied scores move diagonally.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64, f64)>> {
    let (n_pos, n_neg) = check_scores(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut pts = vec![(f64::INFINITY, 0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if labels[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        pts.push((s, fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(pts)
}

/// Unweighted Cohen's kappa for two binary raters. Returns 1 when both raters
/// give one identical constant rating; other zero-variance cases are errors.
pub fn cohens_kappa(a: &[bool], b: &[bool]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!(
            "kappa needs equal nonempty ratings, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as i128;
    let mut agree = 0i128;
    let (mut a1, mut b1) = (0i128, 0i128);
    for (&x, &y) in a.iter().zip(b) {
        agree += (x == y) as i128;
        a1 += x as i128;
        b1 += y as i128;
    }
    // Scaled by n^2: p_o -> n * agree, p_e -> a1 b1 + a0 b0.
    let pe_n2 = a1 * b1 + (n - a1) * (n - b1);
    let po_n2 = n * agree;
    let denom = n * n - pe_n2;
    if denom == 0 {
        if po_n2 == n * n {
            return Ok(1.0);
        }
        return Err(Error::invalid("kappa undefined: chance agreement is 1"));
    }
    Ok((po_n2 - pe_n2) as f64 / denom as f64)
}
