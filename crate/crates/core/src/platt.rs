//! Platt scaling: a logistic map `sigmoid(a * s + b)` fit by damped Newton
//! iteration on the Bernoulli log-likelihood.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::model::logistic;

pub const GRAD_TOL: f64 = 1e-10;
pub const MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub a: f64,
    pub b: f64,
}

impl CalibrationParams {
    pub const IDENTITY: CalibrationParams = CalibrationParams { a: 1.0, b: 0.0 };

    pub fn apply(&self, s: f64) -> f64 {
        logistic(self.a * s + self.b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlattFit {
    pub params: CalibrationParams,
    pub iterations: usize,
    pub grad_norm: f64,
}

fn nll(scores: &[f64], targets: &[f64], a: f64, b: f64) -> f64 {
    scores
        .iter()
        .zip(targets)
        .map(|(&s, &t)| {
            let z = a * s + b;
            // log(1 + e^z) - t z, evaluated stably.
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            softplus - t * z
        })
        .sum()
}

/// Fit against soft targets in [0, 1].
pub fn fit_platt_targets(scores: &[f64], targets: &[f64]) -> Result<PlattFit> {
    if scores.len() != targets.len() || scores.is_empty() {
        return Err(Error::invalid("Platt scaling needs equal nonempty scores and targets"));
    }
    if scores.iter().chain(targets).any(|v| !v.is_finite()) || targets.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::invalid("Platt scaling inputs must be finite with targets in [0, 1]"));
    }
    let mean_t = targets.iter().sum::<f64>() / targets.len() as f64;
    if mean_t <= 0.0 || mean_t >= 1.0 {
        return Err(Error::invalid("Platt scaling needs both classes"));
    }
    let (mut a, mut b) = (0.0, (mean_t / (1.0 - mean_t)).ln());
    let mut f = nll(scores, targets, a, b);
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;
    for it in 0..MAX_ITER {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&s, &t) in scores.iter().zip(targets) {
            let p = logistic(a * s + b);
            let r = p - t;
            let w = p * (1.0 - p);
            ga += r * s;
            gb += r;
            haa += w * s * s;
            hab += w * s;
            hbb += w;
        }
        grad_norm = ga.hypot(gb);
        iterations = it;
        if grad_norm < GRAD_TOL {
            break;
        }
        let ridge = 1e-12 * (haa + hbb).max(1e-300);
        let (haa, hbb) = (haa + ridge, hbb + ridge);
        let det = haa * hbb - hab * hab;
        let (da, db) = if det > 0.0 && det.is_finite() {
            ((hbb * ga - hab * gb) / det, (haa * gb - hab * ga) / det)
        } else {
            (ga, gb)
        };
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let (na, nb) = (a - step * da, b - step * db);
            let nf = nll(scores, targets, na, nb);
            if nf <= f {
                a = na;
                b = nb;
                f = nf;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        iterations = it + 1;
        if !moved {
            break;
        }
    }
    Ok(PlattFit {
        params: CalibrationParams { a, b },
        iterations,
        grad_norm,
    })
}

/// Fit on binary labels. Logs a warning when the slope is not positive.
pub fn fit_platt(scores: &[f64], labels: &[bool]) -> Result<PlattFit> {
    if labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
        return Err(Error::invalid("Platt scaling needs both classes in the pooled holdout"));
    }
    let targets: Vec<f64> = labels.iter().map(|&y| y as u8 as f64).collect();
    let fit = fit_platt_targets(scores, &targets)?;
    if fit.params.a <= 0.0 {
        log::warn!("Platt slope a = {} is not positive; scores look uninformative", fit.params.a);
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_generating_map() {
        let scores: Vec<f64> = (0..200).map(|i| i as f64 / 199.0).collect();
        let targets: Vec<f64> = scores.iter().map(|&s| logistic(4.0 * s - 1.5)).collect();
        let fit = fit_platt_targets(&scores, &targets).unwrap();
        assert!((fit.params.a - 4.0).abs() < 1e-6, "{fit:?}");
        assert!((fit.params.b + 1.5).abs() < 1e-6, "{fit:?}");
    }

    #[test]
    fn no_signal_gives_flat_slope() {
        let scores = [0.2, 0.8, 0.2, 0.8];
        let labels = [true, true, false, false];
        let fit = fit_platt(&scores, &labels).unwrap();
        assert!(fit.params.a.abs() < 1e-9);
        assert!(fit_platt(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn identity_is_not_identity_on_raw() {
        assert_eq!(CalibrationParams::IDENTITY.apply(0.0), 0.5);
    }
}
