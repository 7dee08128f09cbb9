//! Weighted binary cross-entropy on probabilities.

pub const PROB_CLAMP: f64 = 1e-7;

/// `-(pos_weight * y * ln p + (1 - y) * ln(1 - p))` with `p` clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn weighted_bce(p: f64, y: bool, pos_weight: f64) -> f64 {
    let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if y {
        -pos_weight * pc.ln()
    } else {
        -(1.0 - pc).ln()
    }
}

/// Derivative of [`weighted_bce`] with respect to `p`; zero where the clamp
/// is active.
pub fn weighted_bce_grad(p: f64, y: bool, pos_weight: f64) -> f64 {
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        return 0.0;
    }
    if y {
        -pos_weight / p
    } else {
        1.0 / (1.0 - p)
    }
}

/// Inverse-frequency positive weight: negatives over positives.
pub fn pos_weight(n_pos: usize, n_neg: usize) -> f64 {
    if n_pos == 0 {
        1.0
    } else {
        n_neg as f64 / n_pos as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_values() {
        assert!(weighted_bce(1.0 - 1e-7, true, 1.0) < 1.1e-7);
        assert!((weighted_bce(0.5, true, 2.0) - 1.3863).abs() < 1e-4);
        assert!((weighted_bce(0.5, true, 2.0) - 2.0 * 2f64.ln()).abs() < 1e-15);
        for w in [0.1, 1.0, 7.0] {
            assert!((weighted_bce(0.5, false, w) - 2f64.ln()).abs() < 1e-15);
        }
        assert!(weighted_bce(0.0, true, 1.0).is_finite());
    }

    #[test]
    fn gradient_matches_difference() {
        for &(p, y) in &[(0.3, true), (0.7, false), (0.01, true)] {
            let e = 1e-7;
            let fd = (weighted_bce(p + e, y, 1.7) - weighted_bce(p - e, y, 1.7)) / (2.0 * e);
            assert!((fd - weighted_bce_grad(p, y, 1.7)).abs() < 1e-5 * fd.abs().max(1.0));
        }
        assert_eq!(weighted_bce_grad(0.0, true, 1.0), 0.0);
    }
}
