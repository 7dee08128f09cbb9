//! Percentile bootstrap over slides.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::rng_for;

pub const DEFAULT_RESAMPLES: usize = 1000;
/// Redraw budget per resample before giving up on an undefined metric.
const MAX_REDRAWS: usize = 10_000;

/// A point estimate with its percentile interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEstimate {
    pub name: String,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_bootstrap: usize,
    pub seed: u64,
    /// Resamples redrawn because the metric was undefined on them.
    pub redrawn: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub estimate: MetricEstimate,
    /// Metric value of every accepted resample, in resample order.
    pub resamples: Vec<f64>,
}

/// Nearest-rank percentile of sorted values: element `ceil(p * n) - 1`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let k = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// Bootstrap `metric` over `n_items` units. The metric receives the resampled
/// unit indices and returns `None` where it is undefined; such resamples are
/// redrawn from the same stream and counted. Resample `i` draws from a stream
/// keyed by `(seed, i)`, so the result does not depend on thread count.
pub fn bootstrap_ci<F>(name: &str, n_items: usize, metric: F, n_resamples: usize, seed: u64) -> Result<BootstrapResult>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    if n_items == 0 || n_resamples == 0 {
        return Err(Error::invalid("bootstrap needs items and resamples"));
    }
    let all: Vec<usize> = (0..n_items).collect();
    let value = metric(&all).ok_or_else(|| Error::invalid(format!("{name} is undefined on the observed sample")))?;
    let draws: Vec<Result<(f64, usize)>> = (0..n_resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, labels!["bootstrap", i]);
            let mut idx = vec![0usize; n_items];
            for redraws in 0..MAX_REDRAWS {
                for v in idx.iter_mut() {
                    *v = rng.random_range(0..n_items);
                }
                if let Some(m) = metric(&idx) {
                    return Ok((m, redraws));
                }
            }
            Err(Error::invalid(format!("{name} undefined on {MAX_REDRAWS} consecutive resamples")))
        })
        .collect();
    let mut resamples = Vec::with_capacity(n_resamples);
    let mut redrawn = 0;
    for d in draws {
        let (m, r) = d?;
        resamples.push(m);
        redrawn += r;
    }
    let mut sorted = resamples.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(BootstrapResult {
        estimate: MetricEstimate {
            name: name.to_string(),
            value,
            ci_low: nearest_rank(&sorted, 0.025),
            ci_high: nearest_rank(&sorted, 0.975),
            n_bootstrap: n_resamples,
            seed,
            redrawn,
        },
        resamples,
    })
}
