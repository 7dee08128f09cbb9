//! Shift recovery, antisymmetry and FFT round trips.

use cribmil_core::fft::{fft2d_in_place, fft_in_place};
use cribmil_core::raster::Mask;
use cribmil_core::registration::{phase_correlate, transfer_annotations, translate_mask};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random union of ellipses covering at least 10% of the canvas.
fn blob_mask(w: u32, h: u32, rng: &mut ChaCha8Rng) -> Mask {
    loop {
        let n = rng.random_range(3..9);
        let blobs: Vec<(f64, f64, f64, f64)> = (0..n)
            .map(|_| {
                (
                    rng.random_range(0.15..0.85) * w as f64,
                    rng.random_range(0.15..0.85) * h as f64,
                    rng.random_range(0.05..0.2) * w as f64,
                    rng.random_range(0.05..0.2) * h as f64,
                )
            })
            .collect();
        let m = Mask::from_fn(w, h, |x, y| {
            blobs.iter().any(|&(cx, cy, rx, ry)| {
                let u = (x as f64 - cx) / rx;
                let v = (y as f64 - cy) / ry;
                u * u + v * v <= 1.0
            })
        });
        if m.fraction() >= 0.10 {
            return m;
        }
    }
}

#[test]
fn recovers_500_random_shifts_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let sizes = [(256u32, 256u32), (320, 240), (384, 384), (200, 300)];
    let mut failures = Vec::new();
    for trial in 0..500 {
        let (w, h) = sizes[trial % sizes.len()];
        let a = blob_mask(w, h, &mut rng);
        let qx = (w / 4) as i32;
        let qy = (h / 4) as i32;
        let dx = rng.random_range(-qx..=qx);
        let dy = rng.random_range(-qy..=qy);
        let b = translate_mask(&a, dx, dy);
        if b.is_empty() {
            continue;
        }
        let s = phase_correlate(&a, &b).unwrap();
        if (s.dx, s.dy) != (dx, dy) {
            failures.push((trial, w, h, dx, dy, s.dx, s.dy));
        }
    }
    assert!(failures.is_empty(), "{} failures: {:?}", failures.len(), &failures[..failures.len().min(10)]);
}

#[test]
fn shift_17_minus_9() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let a = blob_mask(512, 512, &mut rng);
    let b = translate_mask(&a, 17, -9);
    let s = phase_correlate(&a, &b).unwrap();
    assert_eq!((s.dx, s.dy), (17, -9));
    assert!(!s.low_confidence());
    let moved = transfer_annotations(&a, &s);
    assert_eq!(moved, b);
}

#[test]
fn fft_round_trip_below_1e9() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for &n in &[1usize, 2, 8, 64, 1024, 4096] {
        let orig: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let mut d = orig.clone();
        fft_in_place(&mut d, false);
        fft_in_place(&mut d, true);
        let err = orig.iter().zip(&d).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-9, "n={n} err={err:e}");
    }
    let (w, h) = (128, 64);
    let orig: Vec<Complex64> = (0..w * h).map(|_| Complex64::new(rng.random(), 0.0)).collect();
    let mut d = orig.clone();
    fft2d_in_place(&mut d, w, h, false);
    fft2d_in_place(&mut d, w, h, true);
    let err = orig.iter().zip(&d).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(err < 1e-9);
}

#[test]
fn mismatched_or_empty_masks_fail() {
    let a = Mask::from_fn(64, 64, |x, _| x < 20);
    assert!(phase_correlate(&a, &Mask::new(64, 64)).is_err());
    assert!(phase_correlate(&a, &Mask::from_fn(64, 32, |x, _| x < 20)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn correlation_is_antisymmetric(seed in any::<u64>(), dx in -40i32..=40, dy in -40i32..=40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = blob_mask(256, 192, &mut rng);
        let b = translate_mask(&a, dx, dy);
        prop_assume!(!b.is_empty());
        let ab = phase_correlate(&a, &b).unwrap();
        let ba = phase_correlate(&b, &a).unwrap();
        prop_assert_eq!((ab.dx, ab.dy), (-ba.dx, -ba.dy));
    }

    #[test]
    fn identity_shift_is_zero(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = blob_mask(160, 160, &mut rng);
        let s = phase_correlate(&a, &a).unwrap();
        prop_assert_eq!((s.dx, s.dy), (0, 0));
        prop_assert!(s.peak_response > 0.0);
    }
}
