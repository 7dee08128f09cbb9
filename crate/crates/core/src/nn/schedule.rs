//! One-cycle learning-rate schedule: cosine warm-up over the first epoch,
//! then cosine annealing to the floor.

use std::f64::consts::PI;

pub const ONECYCLE_START: f64 = 1e-5;
pub const ONECYCLE_PEAK: f64 = 1e-4;
pub const ONECYCLE_END: f64 = 1e-6;

fn cosine(from: f64, to: f64, frac: f64) -> f64 {
    let w = (1.0 + (PI * frac.clamp(0.0, 1.0)).cos()) / 2.0;
    from * w + to * (1.0 - w)
}

/// Learning rate at optimizer step `step` out of `total_steps`, peaking after
/// `warmup_steps` (one epoch).
pub fn onecycle_lr(step: usize, total_steps: usize, warmup_steps: usize) -> f64 {
    let warm = warmup_steps.min(total_steps);
    if step <= warm {
        if warm == 0 {
            return ONECYCLE_PEAK;
        }
        cosine(ONECYCLE_START, ONECYCLE_PEAK, step as f64 / warm as f64)
    } else {
        let span = (total_steps - warm).max(1);
        cosine(ONECYCLE_PEAK, ONECYCLE_END, (step - warm) as f64 / span as f64)
    }
}
