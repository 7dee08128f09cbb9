//! Tissue masking, the overlapping patch grid, coverage filtering, patch
//! labels and the two non-overlapping patch subsets.

use image::RgbImage;

use crate::error::{Error, Result};
use crate::raster::{luma_u8, Mask};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub patch_size: u32,
    pub stride: u32,
    /// Micrometres per pixel that patches are extracted at.
    pub target_spacing: f64,
    /// Patches with less tissue than this are discarded.
    pub min_tissue_fraction: f64,
    /// Patches with strictly more annotated tissue than this are positive.
    pub patch_positive_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            patch_size: 256,
            stride: 128,
            target_spacing: 1.0,
            min_tissue_fraction: 0.10,
            patch_positive_fraction: 0.02,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.patch_size % 2 != 0 || self.stride * 2 != self.patch_size {
            return Err(Error::invalid(format!(
                "stride ({}) must be half the patch size ({})",
                self.stride, self.patch_size
            )));
        }
        for (name, v) in [
            ("min_tissue_fraction", self.min_tissue_fraction),
            ("patch_positive_fraction", self.patch_positive_fraction),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if !(self.target_spacing > 0.0) {
            return Err(Error::invalid("target_spacing must be positive"));
        }
        Ok(())
    }

    fn area(&self) -> f64 {
        (self.patch_size as f64) * (self.patch_size as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchRecord {
    /// Grid row.
    pub i: u32,
    /// Grid column.
    pub j: u32,
    pub x: u32,
    pub y: u32,
    pub tissue_fraction: f64,
    pub annotated_fraction: f64,
    pub label: bool,
}

impl PatchRecord {
    pub fn key(&self) -> String {
        patch_key(self.i, self.j)
    }
}

/// Patch-store key for grid cell `(i, j)`.
pub fn patch_key(i: u32, j: u32) -> String {
    format!("r{i:03}c{j:03}")
}

/// Otsu threshold on a 256-bin histogram; pixels `<= t` form the dark class.
/// `None` when the histogram has a single occupied level.
pub fn otsu_threshold(hist: &[u64; 256]) -> Option<u8> {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return None;
    }
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mut w0 = 0u64;
    let mut sum0 = 0.0;
    let mut best: Option<(u8, f64)> = None;
    for t in 0..255usize {
        w0 += hist[t];
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_all - sum0) / w1 as f64;
        let between = w0 as f64 * w1 as f64 * (m0 - m1) * (m0 - m1);
        if best.is_none_or(|(_, b)| between > b) {
            best = Some((t as u8, between));
        }
    }
    best.map(|(t, _)| t)
}

/// 3x3 majority filter; border pixels vote over their in-bounds neighbours.
pub fn majority_smooth(mask: &Mask) -> Mask {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let src = mask.as_slice();
    // Horizontal 3-sums, then vertical.
    let mut rows = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(1);
            let hi = (x + 1).min(w - 1);
            rows[y * w + x] = (lo..=hi).map(|xx| src[y * w + xx] as u8).sum();
        }
    }
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let lo = y.saturating_sub(1);
        let hi = (y + 1).min(h - 1);
        let ny = hi - lo + 1;
        for x in 0..w {
            let nx = x.min(1) + 1 + usize::from(x + 1 < w);
            let votes: u32 = (lo..=hi).map(|yy| rows[yy * w + x] as u32).sum();
            out.push(2 * votes as usize > nx * ny);
        }
    }
    Mask::from_vec(mask.width(), mask.height(), out).expect("dimensions preserved")
}

/// Minimum gap between Otsu class means (in luminance levels) for an image to
/// count as containing tissue at all.
const MIN_CLASS_SEPARATION: f64 = 8.0;

/// Foreground = pixels at or below the Otsu luminance threshold, followed by
/// 3x3 majority smoothing. Uniform images give an empty mask.
pub fn tissue_mask(image: &RgbImage) -> Mask {
    let (w, h) = image.dimensions();
    let luma: Vec<u8> = image.pixels().map(|p| luma_u8(p.0)).collect();
    let mut hist = [0u64; 256];
    for &l in &luma {
        hist[l as usize] += 1;
    }
    let Some(t) = otsu_threshold(&hist) else {
        return Mask::new(w, h);
    };
    let (mut c0, mut s0, mut c1, mut s1) = (0u64, 0.0, 0u64, 0.0);
    for (v, &c) in hist.iter().enumerate() {
        if v as u8 <= t {
            c0 += c;
            s0 += v as f64 * c as f64;
        } else {
            c1 += c;
            s1 += v as f64 * c as f64;
        }
    }
    if (s1 / c1 as f64) - (s0 / c0 as f64) < MIN_CLASS_SEPARATION {
        return Mask::new(w, h);
    }
    let raw = Mask::from_vec(w, h, luma.iter().map(|&l| l <= t).collect()).expect("dimensions match");
    majority_smooth(&raw)
}

/// Every full patch origin on the stride lattice, row-major.
pub fn extract_grid(width: u32, height: u32, cfg: &PipelineConfig) -> Result<Vec<PatchRecord>> {
    if width < cfg.patch_size || height < cfg.patch_size {
        return Err(Error::invalid(format!(
            "image {width}x{height} is smaller than one {}px patch",
            cfg.patch_size
        )));
    }
    let cols = (width - cfg.patch_size) / cfg.stride + 1;
    let rows = (height - cfg.patch_size) / cfg.stride + 1;
    let mut out = Vec::with_capacity((rows * cols) as usize);
    for i in 0..rows {
        for j in 0..cols {
            out.push(PatchRecord {
                i,
                j,
                x: j * cfg.stride,
                y: i * cfg.stride,
                tissue_fraction: 0.0,
                annotated_fraction: 0.0,
                label: false,
            });
        }
    }
    Ok(out)
}

/// Closed-form grid size.
pub fn grid_count(width: u32, height: u32, cfg: &PipelineConfig) -> usize {
    if width < cfg.patch_size || height < cfg.patch_size {
        return 0;
    }
    (((width - cfg.patch_size) / cfg.stride + 1) * ((height - cfg.patch_size) / cfg.stride + 1)) as usize
}

/// Keep rule: a patch is discarded only when tissue covers *less* than the
/// minimum fraction.
#[inline]
pub fn coverage_keeps(tissue_fraction: f64, cfg: &PipelineConfig) -> bool {
    tissue_fraction >= cfg.min_tissue_fraction
}

/// Positive rule: strictly more annotated tissue than the threshold.
#[inline]
pub fn label_from_fraction(annotated_fraction: f64, cfg: &PipelineConfig) -> bool {
    annotated_fraction > cfg.patch_positive_fraction
}

fn check_dims(mask: &Mask, patches: &[PatchRecord], cfg: &PipelineConfig) -> Result<()> {
    for p in patches {
        if p.x + cfg.patch_size > mask.width() || p.y + cfg.patch_size > mask.height() {
            return Err(Error::invalid(format!(
                "patch ({}, {}) exceeds mask {}x{}",
                p.i,
                p.j,
                mask.width(),
                mask.height()
            )));
        }
    }
    Ok(())
}

/// Fill `tissue_fraction` and keep patches passing the coverage rule.
pub fn filter_by_coverage(patches: &[PatchRecord], mask: &Mask, cfg: &PipelineConfig) -> Result<Vec<PatchRecord>> {
    check_dims(mask, patches, cfg)?;
    let ii = mask.integral();
    let area = cfg.area();
    Ok(patches
        .iter()
        .filter_map(|p| {
            let f = ii.rect_sum(p.x, p.y, cfg.patch_size, cfg.patch_size) as f64 / area;
            coverage_keeps(f, cfg).then(|| PatchRecord {
                tissue_fraction: f,
                ..p.clone()
            })
        })
        .collect())
}

/// Fill `annotated_fraction` and `label` from a pixel annotation.
pub fn label_patches(patches: &mut [PatchRecord], annotation: &Mask, cfg: &PipelineConfig) -> Result<()> {
    check_dims(annotation, patches, cfg)?;
    let ii = annotation.integral();
    let area = cfg.area();
    for p in patches.iter_mut() {
        p.annotated_fraction = ii.rect_sum(p.x, p.y, cfg.patch_size, cfg.patch_size) as f64 / area;
        p.label = label_from_fraction(p.annotated_fraction, cfg);
    }
    Ok(())
}

/// Label one patch from a pixel annotation.
pub fn label_patch(patch: &PatchRecord, annotation: &Mask, cfg: &PipelineConfig) -> Result<bool> {
    let mut p = [patch.clone()];
    label_patches(&mut p, annotation, cfg)?;
    Ok(p[0].label)
}

/// Indices of the two non-overlapping subsets: (even row, even column) and
/// (odd row, odd column). With a half-patch stride, members of a subset are a
/// full patch apart.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DisjointSets {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
}

impl DisjointSets {
    pub fn get(&self, which: usize) -> &[usize] {
        if which % 2 == 0 {
            &self.a
        } else {
            &self.b
        }
    }
}

pub fn split_disjoint_sets(patches: &[PatchRecord]) -> DisjointSets {
    let mut sets = DisjointSets::default();
    for (k, p) in patches.iter().enumerate() {
        match (p.i % 2, p.j % 2) {
            (0, 0) => sets.a.push(k),
            (1, 1) => sets.b.push(k),
            _ => {}
        }
    }
    sets
}

/// Copy the pixels of one patch.
pub fn crop_patch(image: &RgbImage, patch: &PatchRecord, cfg: &PipelineConfig) -> RgbImage {
    image::imageops::crop_imm(image, patch.x, patch.y, cfg.patch_size, cfg.patch_size).to_image()
}

/// Tile one scan: mask tissue, build the grid, drop low-coverage patches.
pub fn tile_scan(image: &RgbImage, cfg: &PipelineConfig) -> Result<(Mask, Vec<PatchRecord>)> {
    let mask = tissue_mask(image);
    let grid = extract_grid(image.width(), image.height(), cfg)?;
    let kept = filter_by_coverage(&grid, &mask, cfg)?;
    Ok((mask, kept))
}
