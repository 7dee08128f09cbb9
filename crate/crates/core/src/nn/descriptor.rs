//! Fixed, non-learned patch descriptors: intensity, gradient and topology
//! statistics of a tile.

use image::RgbImage;

use crate::raster::luma_f64;

pub const LUMA_BINS: usize = 16;
pub const ORIENT_BINS: usize = 8;
pub const MAG_BINS: usize = 8;
pub const TOPO_STATS: usize = 8;
pub const DESCRIPTOR_DIM: usize = LUMA_BINS + ORIENT_BINS + MAG_BINS + TOPO_STATS;

pub const LUMA_BLOCK: std::ops::Range<usize> = 0..LUMA_BINS;
pub const ORIENT_BLOCK: std::ops::Range<usize> = LUMA_BINS..LUMA_BINS + ORIENT_BINS;
pub const MAG_BLOCK: std::ops::Range<usize> = LUMA_BINS + ORIENT_BINS..LUMA_BINS + ORIENT_BINS + MAG_BINS;
pub const TOPO_BLOCK: std::ops::Range<usize> = DESCRIPTOR_DIM - TOPO_STATS..DESCRIPTOR_DIM;

/// Pixels darker than this are epithelium-like foreground.
pub const FOREGROUND_LUMA: f64 = 0.55;
/// Foreground components smaller than this are speckle.
pub const MIN_COMPONENT_AREA: usize = 20;
/// Enclosed background regions smaller than this are not counted as holes.
pub const MIN_HOLE_AREA: usize = 6;
/// Upper edge of the last bounded gradient-magnitude bin.
const MAG_RANGE: f64 = 0.2;

pub type Descriptor = [f64; DESCRIPTOR_DIM];

/// Orientation bin of a gradient. Bins are centred at `-pi + k*pi/4` and
/// decided by tangent comparisons on `|gx|`, mirrored so that a horizontal
/// flip maps bin `k` to `(4 - k) mod 8` exactly.
#[inline]
fn orientation_bin(gx: f64, gy: f64) -> usize {
    const TAN_PI_8: f64 = 0.414_213_562_373_095_1;
    const TAN_3PI_8: f64 = 2.414_213_562_373_095;
    let ax = gx.abs();
    let ay = gy.abs();
    let b = if ay < TAN_PI_8 * ax {
        4
    } else if ay < TAN_3PI_8 * ax {
        if gy > 0.0 {
            5
        } else {
            3
        }
    } else if gy > 0.0 {
        6
    } else {
        2
    };
    if gx < 0.0 {
        (12 - b) % 8
    } else {
        b
    }
}

/// Compute the 40-dimensional descriptor of a patch.
pub fn patch_descriptor(patch: &RgbImage) -> Descriptor {
    let (w, h) = (patch.width() as usize, patch.height() as usize);
    let lum: Vec<f64> = patch.pixels().map(|p| luma_f64(p.0)).collect();
    let mut d = [0.0; DESCRIPTOR_DIM];

    let n = lum.len().max(1) as f64;
    for &l in &lum {
        let b = ((l * LUMA_BINS as f64) as usize).min(LUMA_BINS - 1);
        d[b] += 1.0;
    }
    if lum.is_empty() {
        d[0] = 1.0;
    } else {
        for v in &mut d[LUMA_BLOCK] {
            *v /= n;
        }
    }

    let mut orient = [0.0; ORIENT_BINS];
    let mut mag = [0.0; MAG_BINS];
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let gx = (lum[y * w + x + 1] - lum[y * w + x - 1]) / 2.0;
            let gy = (lum[(y + 1) * w + x] - lum[(y - 1) * w + x]) / 2.0;
            let m = (gx * gx + gy * gy).sqrt();
            count += 1;
            if m > 0.0 {
                orient[orientation_bin(gx, gy)] += m;
                total += m;
                let mb = ((m / MAG_RANGE * (MAG_BINS - 1) as f64) as usize).min(MAG_BINS - 1);
                mag[mb] += 1.0;
            }
        }
    }
    if total > 0.0 {
        for (k, v) in orient.iter().enumerate() {
            d[ORIENT_BLOCK.start + k] = v / total;
        }
        let nonzero: f64 = mag.iter().sum();
        // Zero-magnitude pixels belong to the first magnitude bin.
        mag[0] += (count as f64) - nonzero;
        for (k, v) in mag.iter().enumerate() {
            d[MAG_BLOCK.start + k] = v / count as f64;
        }
    } else {
        d[ORIENT_BLOCK].fill(1.0 / ORIENT_BINS as f64);
        d[MAG_BLOCK].fill(1.0 / MAG_BINS as f64);
    }

    let topo = topology_stats(&lum, w, h);
    d[TOPO_BLOCK].copy_from_slice(&topo);
    d
}

/// Topology statistics of the thresholded patch.
///
/// Order: foreground fraction, ln(1+components), ln(1+holes),
/// ln(1+holes per component) at the median, 90th percentile and maximum,
/// fraction of components with at least one hole, hole area over foreground
/// plus hole area.
pub fn topology_stats(lum: &[f64], w: usize, h: usize) -> [f64; TOPO_STATS] {
    let fg: Vec<bool> = lum.iter().map(|&l| l < FOREGROUND_LUMA).collect();
    let fg_count = fg.iter().filter(|&&b| b).count();
    let mut out = [0.0; TOPO_STATS];
    if fg.is_empty() {
        return out;
    }
    out[0] = fg_count as f64 / fg.len() as f64;

    let (fg_labels, fg_areas) = label_components(&fg, w, h, true, true);
    let (bg_labels, bg_areas) = label_components(&fg, w, h, false, false);

    let mut touches = vec![false; bg_areas.len()];
    for y in 0..h {
        for x in 0..w {
            if (x == 0 || y == 0 || x == w - 1 || y == h - 1) && !fg[y * w + x] {
                touches[bg_labels[y * w + x] as usize] = true;
            }
        }
    }
    // Each enclosed background region is owned by the foreground component
    // containing any of its 4-neighbours.
    let mut owner = vec![u32::MAX; bg_areas.len()];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if fg[i] {
                continue;
            }
            let l = bg_labels[i] as usize;
            if touches[l] || owner[l] != u32::MAX {
                continue;
            }
            for (nx, ny) in [(x.wrapping_sub(1), y), (x + 1, y), (x, y.wrapping_sub(1)), (x, y + 1)] {
                if nx < w && ny < h && fg[ny * w + nx] {
                    owner[l] = fg_labels[ny * w + nx];
                    break;
                }
            }
        }
    }

    let mut holes = vec![0usize; fg_areas.len()];
    let mut hole_area = 0usize;
    for (l, &area) in bg_areas.iter().enumerate() {
        if touches[l] || area < MIN_HOLE_AREA || owner[l] == u32::MAX {
            continue;
        }
        let o = owner[l] as usize;
        if fg_areas[o] >= MIN_COMPONENT_AREA {
            holes[o] += 1;
            hole_area += area;
        }
    }
    let mut per_comp: Vec<usize> = fg_areas
        .iter()
        .zip(&holes)
        .filter(|(&a, _)| a >= MIN_COMPONENT_AREA)
        .map(|(_, &k)| k)
        .collect();
    if per_comp.is_empty() {
        return out;
    }
    per_comp.sort_unstable();
    let total_holes: usize = per_comp.iter().sum();
    let q = |p: f64| per_comp[((p * per_comp.len() as f64).ceil() as usize).clamp(1, per_comp.len()) - 1] as f64;
    out[1] = (per_comp.len() as f64).ln_1p();
    out[2] = (total_holes as f64).ln_1p();
    out[3] = q(0.5).ln_1p();
    out[4] = q(0.9).ln_1p();
    out[5] = (*per_comp.last().expect("nonempty") as f64).ln_1p();
    out[6] = per_comp.iter().filter(|&&k| k > 0).count() as f64 / per_comp.len() as f64;
    out[7] = hole_area as f64 / (fg_count + hole_area) as f64;
    out
}

/// Label the connected components of pixels equal to `value`. Returns a label
/// per pixel (meaningless for other pixels) and the area of each component.
fn label_components(mask: &[bool], w: usize, h: usize, value: bool, eight: bool) -> (Vec<u32>, Vec<usize>) {
    // Work on a grid padded by one pixel of the opposite value so that
    // neighbour lookups need no bounds checks.
    let pw = w + 2;
    let mut grid = vec![!value; pw * (h + 2)];
    for y in 0..h {
        grid[(y + 1) * pw + 1..(y + 1) * pw + 1 + w].copy_from_slice(&mask[y * w..(y + 1) * w]);
    }
    let pw_i = pw as isize;
    let n8 = [-pw_i - 1, -pw_i, -pw_i + 1, -1, 1, pw_i - 1, pw_i, pw_i + 1];
    let n4 = [-pw_i, -1, 1, pw_i];
    let offsets: &[isize] = if eight { &n8 } else { &n4 };
    let mut labels = vec![u32::MAX; grid.len()];
    let mut areas = Vec::new();
    let mut stack = Vec::new();
    for y in 1..=h {
        for x in 1..=w {
            let start = y * pw + x;
            if grid[start] != value || labels[start] != u32::MAX {
                continue;
            }
            let id = areas.len() as u32;
            labels[start] = id;
            stack.push(start);
            let mut area = 0;
            while let Some(i) = stack.pop() {
                area += 1;
                for &o in offsets {
                    let j = (i as isize + o) as usize;
                    if grid[j] == value && labels[j] == u32::MAX {
                        labels[j] = id;
                        stack.push(j);
                    }
                }
            }
            areas.push(area);
        }
    }
    let mut out = vec![u32::MAX; w * h];
    for y in 0..h {
        out[y * w..(y + 1) * w].copy_from_slice(&labels[(y + 1) * pw + 1..(y + 1) * pw + 1 + w]);
    }
    (out, areas)
}
