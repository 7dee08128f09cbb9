//! Translation-only registration of binary tissue masks between scans.
//!
//! A coarse estimate comes from phase correlation on 4x block-averaged masks
//! (zero-padded to powers of two). It is scaled back up and refined by an
//! exhaustive integer search over a ±4 px window at full resolution, which is
//! re-centred while the optimum sits on the window border.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::fft2d_in_place;
use crate::raster::Mask;

/// Spectral bins weaker than this are left unwhitened.
const WHITEN_FLOOR: f64 = 1e-12;
/// Below this peak-to-second-peak ratio an estimate is reported as low confidence.
pub const LOW_CONFIDENCE_RATIO: f64 = 2.0;
const DOWNSAMPLE: usize = 4;
const REFINE_RADIUS: i32 = 4;

/// `(dx, dy)` such that the second mask is the first translated by it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftEstimate {
    pub dx: i32,
    pub dy: i32,
    pub peak_response: f64,
    /// Peak over the highest value outside the peak's 3x3 neighbourhood.
    pub peak_ratio: f64,
}

impl ShiftEstimate {
    pub fn low_confidence(&self) -> bool {
        self.peak_ratio < LOW_CONFIDENCE_RATIO
    }
}

fn signed_index(p: usize, n: usize) -> i64 {
    if p > n / 2 {
        p as i64 - n as i64
    } else {
        p as i64
    }
}

/// Phase correlation of two real images of equal size at their native
/// resolution. Returns the integer shift maximizing the whitened
/// cross-power surface; exact ties go to the smallest `(dy, dx)`.
pub fn phase_correlate_grid(a: &[f64], b: &[f64], width: usize, height: usize) -> Result<ShiftEstimate> {
    if a.len() != width * height || b.len() != width * height {
        return Err(Error::invalid("phase correlation inputs do not match their dimensions"));
    }
    let (pw, ph) = (width.next_power_of_two(), height.next_power_of_two());
    let load = |src: &[f64]| {
        let mut buf = vec![Complex64::new(0.0, 0.0); pw * ph];
        for y in 0..height {
            for x in 0..width {
                buf[y * pw + x] = Complex64::new(src[y * width + x], 0.0);
            }
        }
        fft2d_in_place(&mut buf, pw, ph, false);
        buf
    };
    let fa = load(a);
    let fb = load(b);
    let mut cross: Vec<Complex64> = fa
        .iter()
        .zip(&fb)
        .map(|(x, y)| {
            let c = x * y.conj();
            let m = c.norm();
            if m > WHITEN_FLOOR {
                c / m
            } else {
                c
            }
        })
        .collect();
    fft2d_in_place(&mut cross, pw, ph, true);
    let surface: Vec<f64> = cross.iter().map(|c| c.re).collect();

    // The surface peaks at minus the shift of b relative to a.
    let mut best: Option<(f64, i64, i64, usize)> = None;
    for (idx, &v) in surface.iter().enumerate() {
        let dx = -signed_index(idx % pw, pw);
        let dy = -signed_index(idx / pw, ph);
        let better = match best {
            None => true,
            Some((bv, bx, by, _)) => v > bv || (v == bv && (dy, dx) < (by, bx)),
        };
        if better {
            best = Some((v, dx, dy, idx));
        }
    }
    let (peak, dx, dy, idx) = best.expect("surface is non-empty");
    let (px, py) = ((idx % pw) as i64, (idx / pw) as i64);
    let mut second = f64::NEG_INFINITY;
    for (i, &v) in surface.iter().enumerate() {
        let ddx = ((i % pw) as i64 - px).rem_euclid(pw as i64);
        let ddy = ((i / pw) as i64 - py).rem_euclid(ph as i64);
        let near_x = ddx <= 1 || ddx >= pw as i64 - 1;
        let near_y = ddy <= 1 || ddy >= ph as i64 - 1;
        if !(near_x && near_y) {
            second = second.max(v);
        }
    }
    let peak_ratio = if second.is_finite() { peak / second.max(WHITEN_FLOOR) } else { f64::INFINITY };
    Ok(ShiftEstimate {
        dx: dx as i32,
        dy: dy as i32,
        peak_response: peak,
        peak_ratio,
    })
}

fn block_mean(mask: &Mask, factor: usize) -> (Vec<f64>, usize, usize) {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let (bw, bh) = (w.div_ceil(factor), h.div_ceil(factor));
    let mut sums = vec![0u32; bw * bh];
    let mut counts = vec![0u32; bw * bh];
    let src = mask.as_slice();
    for y in 0..h {
        for x in 0..w {
            let k = (y / factor) * bw + x / factor;
            sums[k] += src[y * w + x] as u32;
            counts[k] += 1;
        }
    }
    let out = sums.iter().zip(&counts).map(|(&s, &c)| s as f64 / c as f64).collect();
    (out, bw, bh)
}

/// Masks packed into 64-bit words per row for fast overlap scoring.
struct PackedMask {
    width: usize,
    height: usize,
    words: usize,
    bits: Vec<u64>,
}

impl PackedMask {
    fn new(m: &Mask) -> Self {
        let (width, height) = (m.width() as usize, m.height() as usize);
        let words = width.div_ceil(64);
        let mut bits = vec![0u64; words * height];
        for (i, &b) in m.as_slice().iter().enumerate() {
            if b {
                let (x, y) = (i % width, i / width);
                bits[y * words + x / 64] |= 1u64 << (x % 64);
            }
        }
        Self {
            width,
            height,
            words,
            bits,
        }
    }

    fn row(&self, y: usize) -> &[u64] {
        &self.bits[y * self.words..(y + 1) * self.words]
    }
}

/// 64 bits of `row` starting at bit `pos` (bits outside the row read as 0).
#[inline]
fn bits_at(row: &[u64], pos: i64) -> u64 {
    let q = pos.div_euclid(64);
    let r = pos.rem_euclid(64) as u32;
    let word = |i: i64| if i >= 0 && (i as usize) < row.len() { row[i as usize] } else { 0 };
    let lo = word(q) >> r;
    if r == 0 {
        lo
    } else {
        lo | (word(q + 1) << (64 - r))
    }
}

/// Agreement score of `b` against `a` translated by `(dx, dy)`, over the
/// overlap: shared foreground minus disagreeing pixels.
fn overlap_score(a: &PackedMask, b: &PackedMask, dx: i32, dy: i32) -> i64 {
    let (w, h) = (a.width as i64, a.height as i64);
    let (dx, dy) = (dx as i64, dy as i64);
    let x_lo = 0.max(-dx);
    let x_hi = w.min(w - dx);
    let y_lo = 0.max(-dy);
    let y_hi = h.min(h - dy);
    if x_lo >= x_hi || y_lo >= y_hi {
        return i64::MIN;
    }
    let valid: Vec<u64> = (0..a.words)
        .map(|k| {
            let start = k as i64 * 64;
            let lo = (x_lo - start).clamp(0, 64);
            let hi = (x_hi - start).clamp(0, 64);
            if hi <= lo {
                0
            } else {
                let span = (hi - lo) as u32;
                let m = if span == 64 { u64::MAX } else { (1u64 << span) - 1 };
                m << lo
            }
        })
        .collect();
    let mut score = 0i64;
    for y in y_lo..y_hi {
        let ra = a.row(y as usize);
        let rb = b.row((y + dy) as usize);
        for k in 0..a.words {
            let wa = ra[k] & valid[k];
            let wb = bits_at(rb, k as i64 * 64 + dx) & valid[k];
            score += (wa & wb).count_ones() as i64 - (wa ^ wb).count_ones() as i64;
        }
    }
    score
}

/// Register `b` against `a`: returns the translation taking `a` onto `b`.
pub fn phase_correlate(a: &Mask, b: &Mask) -> Result<ShiftEstimate> {
    if a.dims() != b.dims() {
        return Err(Error::invalid(format!(
            "mask dimensions differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("cannot register an empty mask"));
    }
    let (w, h) = (a.width() as usize, a.height() as usize);
    let factor = if w.min(h) >= 16 * DOWNSAMPLE { DOWNSAMPLE } else { 1 };
    let (ca, cw, ch) = block_mean(a, factor);
    let (cb, _, _) = block_mean(b, factor);
    let coarse = phase_correlate_grid(&ca, &cb, cw, ch)?;

    let pa = PackedMask::new(a);
    let pb = PackedMask::new(b);
    let mut center = (coarse.dx * factor as i32, coarse.dy * factor as i32);
    let limit = (w as i32 / 2 - 1, h as i32 / 2 - 1);
    let mut best = (i64::MIN, center.0, center.1);
    for _ in 0..16 {
        let mut local = (i64::MIN, center.0, center.1);
        for dy in center.1 - REFINE_RADIUS..=center.1 + REFINE_RADIUS {
            for dx in center.0 - REFINE_RADIUS..=center.0 + REFINE_RADIUS {
                if dx.abs() > limit.0 || dy.abs() > limit.1 {
                    continue;
                }
                let s = overlap_score(&pa, &pb, dx, dy);
                if s > local.0 || (s == local.0 && (dy, dx) < (local.2, local.1)) {
                    local = (s, dx, dy);
                }
            }
        }
        let improved = local.0 > best.0;
        if improved {
            best = local;
        }
        let on_border = (best.1 - center.0).abs() == REFINE_RADIUS || (best.2 - center.1).abs() == REFINE_RADIUS;
        if !improved || !on_border {
            break;
        }
        center = (best.1, best.2);
    }
    Ok(ShiftEstimate {
        dx: best.1,
        dy: best.2,
        peak_response: coarse.peak_response,
        peak_ratio: coarse.peak_ratio,
    })
}

/// Move a binary annotation by an integer shift; pixels leaving the canvas are
/// dropped and uncovered pixels are background.
pub fn transfer_annotations(mask: &Mask, shift: &ShiftEstimate) -> Mask {
    translate_mask(mask, shift.dx, shift.dy)
}

pub fn translate_mask(mask: &Mask, dx: i32, dy: i32) -> Mask {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    Mask::from_fn(mask.width(), mask.height(), |x, y| {
        let (sx, sy) = (x as i64 - dx as i64, y as i64 - dy as i64);
        sx >= 0 && sy >= 0 && sx < w && sy < h && mask.get(sx as u32, sy as u32)
    })
}
