//! Deterministic synthetic slide corpus.
//!
//! Tissue is a few elongated stroma bands carrying dark epithelial glands.
//! Glands inside a sieve lesion are punctured by a lattice of lumina, glands in
//! a borderline lesion carry only a few small lumina, and every other gland is
//! solid. The reference annotation marks sieve lesion polygons only.
//!
//! Rendering is a pure function of the [`SlideSpec`] and an integer offset, so
//! rescans and annotation transfers can be checked against fresh renders.

use std::f64::consts::PI;

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, Role, ScanRecord, SlideRecord};
use crate::raster::Mask;
use crate::seeds::{derive_seed, rng_for};

pub const BACKGROUND: [u8; 3] = [244, 242, 246];
const STROMA: [u8; 3] = [214, 150, 186];
const EPITHELIUM: [u8; 3] = [120, 64, 150];
const LUMEN: [u8; 3] = [236, 226, 238];

/// Content is kept this far from the canvas edge so that rescan shifts of up
/// to this many pixels never push tissue out of frame.
pub const CONTENT_MARGIN: f64 = 48.0;

/// Simulated scanner colour response.
#[derive(Debug, Clone, PartialEq)]
pub struct ScannerProfile {
    pub scanner_id: String,
    pub gamma: f64,
    pub channel_gain: [f64; 3],
    pub noise_sigma: f64,
    pub seed_offset: u64,
}

impl ScannerProfile {
    pub fn identity(scanner_id: &str) -> Self {
        Self {
            scanner_id: scanner_id.to_string(),
            gamma: 1.0,
            channel_gain: [1.0; 3],
            noise_sigma: 0.0,
            seed_offset: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.5..=2.0).contains(&self.gamma) {
            return Err(Error::invalid(format!(
                "scanner {}: gamma {} outside [0.5, 2.0]",
                self.scanner_id, self.gamma
            )));
        }
        if self.channel_gain.iter().any(|g| !(0.7..=1.3).contains(g)) {
            return Err(Error::invalid(format!(
                "scanner {}: channel gains must lie in [0.7, 1.3]",
                self.scanner_id
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid(format!("scanner {}: negative noise", self.scanner_id)));
        }
        Ok(())
    }

    /// The built-in scanner table: `S0` (the annotation scanner), three
    /// rescan scanners `S1`..`S3`, and `X1` used for external cohorts.
    pub fn builtin() -> Vec<ScannerProfile> {
        let p = |id: &str, gamma, gain, noise_sigma, seed_offset| ScannerProfile {
            scanner_id: id.to_string(),
            gamma,
            channel_gain: gain,
            noise_sigma,
            seed_offset,
        };
        vec![
            p("S0", 1.0, [1.0, 1.0, 1.0], 0.005, 0),
            p("S1", 1.1, [0.96, 1.0, 1.04], 0.01, 1),
            p("S2", 0.92, [1.04, 0.98, 0.96], 0.01, 2),
            p("S3", 1.15, [0.94, 0.96, 1.0], 0.012, 3),
            p("X1", 0.85, [1.08, 0.93, 1.0], 0.015, 4),
        ]
    }

    pub fn builtin_by_id(id: &str) -> Option<ScannerProfile> {
        Self::builtin().into_iter().find(|p| p.scanner_id == id)
    }

    /// Scalar response: `clip(gain * v^gamma + noise)` on a unit-range value.
    #[inline]
    pub fn respond(&self, v: f64, channel: usize, noise: f64) -> f64 {
        (self.channel_gain[channel] * v.powf(self.gamma) + noise).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LesionClass {
    Sieve,
    Solid,
    Borderline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub vertices: Vec<[f64; 2]>,
}

impl Polygon {
    /// Even-odd point-in-polygon test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let v = &self.vertices;
        let mut inside = false;
        let mut j = v.len() - 1;
        for i in 0..v.len() {
            let (xi, yi) = (v[i][0], v[i][1]);
            let (xj, yj) = (v[j][0], v[j][1]);
            if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    pub fn bbox(&self) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for p in &self.vertices {
            b[0] = b[0].min(p[0]);
            b[1] = b[1].min(p[1]);
            b[2] = b[2].max(p[0]);
            b[3] = b[3].max(p[1]);
        }
        b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lesion {
    pub class: LesionClass,
    pub polygon: Polygon,
}

/// Rotated ellipse of stroma.
#[derive(Debug, Clone, PartialEq)]
pub struct TissueRegion {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub angle: f64,
}

impl TissueRegion {
    #[inline]
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * c + dy * s) / self.rx;
        let v = (-dx * s + dy * c) / self.ry;
        u * u + v * v <= 1.0
    }

    /// Disk of radius `r` at `(x, y)` lies inside the ellipse shrunk by `r`.
    fn contains_disk(&self, x: f64, y: f64, r: f64) -> bool {
        if self.rx <= r || self.ry <= r {
            return false;
        }
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * c + dy * s) / (self.rx - r);
        let v = (-dx * s + dy * c) / (self.ry - r);
        u * u + v * v <= 1.0
    }

    fn half_extents(&self) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        (
            (self.rx * self.rx * c * c + self.ry * self.ry * s * s).sqrt(),
            (self.rx * self.rx * s * s + self.ry * self.ry * c * c).sqrt(),
        )
    }

    fn area(&self) -> f64 {
        PI * self.rx * self.ry
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gland {
    pub body: Circle,
    pub lumina: Vec<Circle>,
    /// Class of the lesion the gland sits in; `None` for ordinary tissue.
    pub lesion: Option<LesionClass>,
}

/// Full geometric description of one slide.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideSpec {
    pub width: u32,
    pub height: u32,
    pub tissue: Vec<TissueRegion>,
    pub lesions: Vec<Lesion>,
    pub glands: Vec<Gland>,
    pub texture_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlideKind {
    Positive,
    Borderline,
    Negative,
}

const CLASS_BG: u8 = 0;
const CLASS_STROMA: u8 = 1;
const CLASS_EPI: u8 = 2;
const CLASS_LUMEN: u8 = 3;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
fn texture_noise(seed: u64, sx: i64, sy: i64) -> i32 {
    let h = splitmix(seed ^ splitmix((sx as u64) ^ ((sy as u64) << 32)));
    (h % 9) as i32 - 4
}

impl SlideSpec {
    /// Reference label: at least one sieve lesion.
    pub fn label(&self) -> bool {
        self.lesions.iter().any(|l| l.class == LesionClass::Sieve)
    }

    pub fn borderline(&self) -> bool {
        !self.label() && self.lesions.iter().any(|l| l.class == LesionClass::Borderline)
    }

    pub fn validate(&self) -> Result<()> {
        for l in &self.lesions {
            let b = l.polygon.bbox();
            if b[0] < 0.0 || b[1] < 0.0 || b[2] > self.width as f64 || b[3] > self.height as f64 {
                return Err(Error::invariant("lesion polygon outside slide bounds"));
            }
        }
        Ok(())
    }

    /// Per-pixel class buffer for the scene translated by `offset`.
    fn classes(&self, offset: (i32, i32)) -> Vec<u8> {
        let (w, h) = (self.width as i64, self.height as i64);
        let mut buf = vec![CLASS_BG; (w * h) as usize];
        let (ox, oy) = (offset.0 as i64, offset.1 as i64);
        let mut paint = |bbox: [f64; 4], class: u8, inside: &dyn Fn(f64, f64) -> bool| {
            let x0 = ((bbox[0].floor() as i64) + ox).max(0);
            let y0 = ((bbox[1].floor() as i64) + oy).max(0);
            let x1 = ((bbox[2].ceil() as i64) + ox).min(w - 1);
            let y1 = ((bbox[3].ceil() as i64) + oy).min(h - 1);
            for y in y0..=y1 {
                let sy = (y - oy) as f64 + 0.5;
                for x in x0..=x1 {
                    let sx = (x - ox) as f64 + 0.5;
                    if inside(sx, sy) {
                        buf[(y * w + x) as usize] = class;
                    }
                }
            }
        };
        for t in &self.tissue {
            let (ex, ey) = t.half_extents();
            paint([t.cx - ex, t.cy - ey, t.cx + ex, t.cy + ey], CLASS_STROMA, &|x, y| t.contains(x, y));
        }
        for g in &self.glands {
            let c = &g.body;
            let disk = |c: &Circle| {
                let c = c.clone();
                move |x: f64, y: f64| (x - c.cx).powi(2) + (y - c.cy).powi(2) <= c.r * c.r
            };
            paint([c.cx - c.r, c.cy - c.r, c.cx + c.r, c.cy + c.r], CLASS_EPI, &disk(c));
            for l in &g.lumina {
                paint([l.cx - l.r, l.cy - l.r, l.cx + l.r, l.cy + l.r], CLASS_LUMEN, &disk(l));
            }
        }
        buf
    }

    /// Base (scanner-independent) rendering with the scene shifted by `offset`.
    pub fn render(&self, offset: (i32, i32)) -> RgbImage {
        let classes = self.classes(offset);
        let w = self.width as usize;
        let mut img = RgbImage::new(self.width, self.height);
        for (i, (px, &c)) in img.pixels_mut().zip(&classes).enumerate() {
            let sx = (i % w) as i64 - offset.0 as i64;
            let sy = (i / w) as i64 - offset.1 as i64;
            let base = match c {
                CLASS_STROMA => STROMA,
                CLASS_EPI => EPITHELIUM,
                CLASS_LUMEN => LUMEN,
                _ => BACKGROUND,
            };
            let n = texture_noise(self.texture_seed, sx, sy);
            *px = Rgb(base.map(|v| (v as i32 + n).clamp(0, 255) as u8));
        }
        img
    }

    /// Reference annotation (sieve lesions) in the frame shifted by `offset`.
    pub fn annotation_mask(&self, offset: (i32, i32)) -> Mask {
        let sieve: Vec<&Polygon> = self
            .lesions
            .iter()
            .filter(|l| l.class == LesionClass::Sieve)
            .map(|l| &l.polygon)
            .collect();
        let mut m = Mask::new(self.width, self.height);
        for p in sieve {
            let b = p.bbox();
            let x0 = ((b[0].floor() as i64) + offset.0 as i64).max(0);
            let y0 = ((b[1].floor() as i64) + offset.1 as i64).max(0);
            let x1 = ((b[2].ceil() as i64) + offset.0 as i64).min(self.width as i64 - 1);
            let y1 = ((b[3].ceil() as i64) + offset.1 as i64).min(self.height as i64 - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let sx = (x - offset.0 as i64) as f64 + 0.5;
                    let sy = (y - offset.1 as i64) as f64 + 0.5;
                    if p.contains(sx, sy) {
                        m.set(x as u32, y as u32, true);
                    }
                }
            }
        }
        m
    }

    /// Ground-truth tissue (everything that is not background).
    pub fn tissue_mask(&self, offset: (i32, i32)) -> Mask {
        let classes = self.classes(offset);
        Mask::from_vec(self.width, self.height, classes.iter().map(|&c| c != CLASS_BG).collect())
            .expect("class buffer matches dimensions")
    }

    /// Fraction of the canvas covered by tissue.
    pub fn tissue_fraction(&self) -> f64 {
        self.tissue_mask((0, 0)).fraction()
    }
}

fn sample_polygon(rng: &mut ChaCha8Rng, cx: f64, cy: f64, radius: f64) -> Polygon {
    let n = 9;
    let phase = rng.random::<f64>() * 2.0 * PI;
    let vertices = (0..n)
        .map(|k| {
            let a = phase + 2.0 * PI * (k as f64 + 0.3 * (rng.random::<f64>() - 0.5)) / n as f64;
            let r = radius * rng.random_range(0.75..1.0);
            [cx + r * a.cos(), cy + r * a.sin()]
        })
        .collect();
    Polygon { vertices }
}

fn sieve_lumina(rng: &mut ChaCha8Rng, body: &Circle) -> Vec<Circle> {
    let spacing = 11.0;
    let hole_r = 3.2;
    let reach = body.r - 6.5;
    let (px, py) = (rng.random::<f64>() * spacing, rng.random::<f64>() * spacing);
    let row_h = spacing * 3f64.sqrt() / 2.0;
    let mut out = Vec::new();
    let rows = (body.r / row_h).ceil() as i32 + 1;
    let cols = (body.r / spacing).ceil() as i32 + 1;
    for row in -rows..=rows {
        let shift = if row.rem_euclid(2) == 1 { spacing / 2.0 } else { 0.0 };
        for col in -cols..=cols {
            let dx = col as f64 * spacing + shift + px - spacing / 2.0;
            let dy = row as f64 * row_h + py - spacing / 2.0;
            if dx * dx + dy * dy <= reach * reach {
                out.push(Circle {
                    cx: body.cx + dx,
                    cy: body.cy + dy,
                    r: hole_r,
                });
            }
        }
    }
    out
}

fn scattered_lumina(rng: &mut ChaCha8Rng, body: &Circle, count: usize, hole_r: f64) -> Vec<Circle> {
    let reach = body.r - hole_r - 4.0;
    let mut out: Vec<Circle> = Vec::new();
    for _ in 0..200 {
        if out.len() == count {
            break;
        }
        let a = rng.random::<f64>() * 2.0 * PI;
        let d = reach * rng.random::<f64>().sqrt();
        let c = Circle {
            cx: body.cx + d * a.cos(),
            cy: body.cy + d * a.sin(),
            r: hole_r,
        };
        if out
            .iter()
            .all(|o| (o.cx - c.cx).hypot(o.cy - c.cy) >= o.r + c.r + 3.0)
        {
            out.push(c);
        }
    }
    out
}

/// Draw a random slide layout.
///
/// `difficulty` in [0, 1] moves borderline glands towards the sieve pattern:
/// more and larger lumina.
pub fn random_slide_spec(kind: SlideKind, width: u32, height: u32, difficulty: f64, rng: &mut ChaCha8Rng) -> SlideSpec {
    let (wf, hf) = (width as f64, height as f64);
    let scale = wf.min(hf);
    let margin = CONTENT_MARGIN;

    let n_regions = rng.random_range(2..=3);
    let mut tissue = Vec::with_capacity(n_regions);
    for _ in 0..n_regions {
        let mut rx = scale * rng.random_range(0.18..0.34);
        let mut ry = scale * rng.random_range(0.07..0.11);
        let angle = rng.random::<f64>() * PI;
        loop {
            let t = TissueRegion { cx: 0.0, cy: 0.0, rx, ry, angle };
            let (ex, ey) = t.half_extents();
            if 2.0 * (ex + margin) < wf && 2.0 * (ey + margin) < hf {
                let cx = rng.random_range((margin + ex)..(wf - margin - ex));
                let cy = rng.random_range((margin + ey)..(hf - margin - ey));
                tissue.push(TissueRegion { cx, cy, ..t });
                break;
            }
            rx *= 0.9;
            ry *= 0.9;
        }
    }

    let mut lesion_classes = Vec::new();
    match kind {
        SlideKind::Positive => lesion_classes.extend(std::iter::repeat_n(LesionClass::Sieve, rng.random_range(1..=2))),
        SlideKind::Borderline => {
            lesion_classes.extend(std::iter::repeat_n(LesionClass::Borderline, rng.random_range(1..=2)))
        }
        SlideKind::Negative => {}
    }
    if rng.random::<f64>() < 0.5 {
        lesion_classes.push(LesionClass::Solid);
    }

    let mut lesions: Vec<(Lesion, [f64; 3])> = Vec::new();
    for class in lesion_classes {
        for _attempt in 0..200 {
            let t = &tissue[rng.random_range(0..tissue.len())];
            let a = rng.random::<f64>() * 2.0 * PI;
            let d = 0.5 * rng.random::<f64>().sqrt();
            let (s, c) = t.angle.sin_cos();
            let (u, v) = (d * a.cos() * t.rx, d * a.sin() * t.ry);
            let (cx, cy) = (t.cx + u * c - v * s, t.cy + u * s + v * c);
            let max_r = (cx - margin).min(cy - margin).min(wf - margin - cx).min(hf - margin - cy);
            let r = rng.random_range(95.0..145.0f64).min(max_r);
            if r < 60.0 {
                continue;
            }
            if lesions
                .iter()
                .any(|(_, o)| (o[0] - cx).hypot(o[1] - cy) < o[2] + r + 20.0)
            {
                continue;
            }
            lesions.push((
                Lesion {
                    class,
                    polygon: sample_polygon(rng, cx, cy, r),
                },
                [cx, cy, r],
            ));
            break;
        }
    }
    // A positive slide must keep its sieve lesion even if placement was crowded.
    if kind == SlideKind::Positive && !lesions.iter().any(|(l, _)| l.class == LesionClass::Sieve) {
        let t = &tissue[0];
        lesions.clear();
        lesions.push((
            Lesion {
                class: LesionClass::Sieve,
                polygon: sample_polygon(rng, t.cx, t.cy, 70.0),
            },
            [t.cx, t.cy, 70.0],
        ));
    }

    let in_tissue = |x: f64, y: f64, r: f64| tissue.iter().any(|t| t.contains_disk(x, y, r));
    let mut glands: Vec<Gland> = Vec::new();
    let free = |glands: &[Gland], x: f64, y: f64, r: f64| {
        glands
            .iter()
            .all(|g| (g.body.cx - x).hypot(g.body.cy - y) >= g.body.r + r + 6.0)
    };
    let make_lumina = |rng: &mut ChaCha8Rng, body: &Circle, class: Option<LesionClass>| match class {
        Some(LesionClass::Sieve) => sieve_lumina(rng, body),
        Some(LesionClass::Borderline) => {
            let base = 1 + rng.random_range(0..2);
            let extra = (difficulty * 3.0).round() as usize;
            scattered_lumina(rng, body, base + extra, 2.6 + 0.6 * difficulty)
        }
        _ => Vec::new(),
    };

    for (lesion, geom) in &lesions {
        let b = lesion.polygon.bbox();
        let mut placed = 0;
        for _ in 0..600 {
            let x = rng.random_range(b[0]..b[2]);
            let y = rng.random_range(b[1]..b[3]);
            let r = rng.random_range(22.0..34.0);
            if lesion.polygon.contains(x, y) && in_tissue(x, y, r) && free(&glands, x, y, r) {
                let body = Circle { cx: x, cy: y, r };
                let lumina = make_lumina(rng, &body, Some(lesion.class));
                glands.push(Gland {
                    body,
                    lumina,
                    lesion: Some(lesion.class),
                });
                placed += 1;
            }
        }
        if placed == 0 {
            // Guarantee the lesion is visible: one small gland at its centre.
            let body = Circle {
                cx: geom[0],
                cy: geom[1],
                r: 22.0,
            };
            let lumina = make_lumina(rng, &body, Some(lesion.class));
            glands.retain(|g| (g.body.cx - body.cx).hypot(g.body.cy - body.cy) >= g.body.r + body.r + 6.0);
            glands.push(Gland {
                body,
                lumina,
                lesion: Some(lesion.class),
            });
        }
    }

    let tissue_area: f64 = tissue.iter().map(|t| t.area()).sum();
    let attempts = (tissue_area / 350.0) as usize;
    for _ in 0..attempts {
        let t = &tissue[rng.random_range(0..tissue.len())];
        let a = rng.random::<f64>() * 2.0 * PI;
        let d = rng.random::<f64>().sqrt();
        let (s, c) = t.angle.sin_cos();
        let (u, v) = (d * a.cos() * t.rx, d * a.sin() * t.ry);
        let (x, y) = (t.cx + u * c - v * s, t.cy + u * s + v * c);
        let r = rng.random_range(18.0..32.0);
        if lesions.iter().any(|(l, _)| l.polygon.contains(x, y)) {
            continue;
        }
        if in_tissue(x, y, r) && free(&glands, x, y, r) {
            glands.push(Gland {
                body: Circle { cx: x, cy: y, r },
                lumina: Vec::new(),
                lesion: None,
            });
        }
    }

    SlideSpec {
        width,
        height,
        tissue,
        lesions: lesions.into_iter().map(|(l, _)| l).collect(),
        glands,
        texture_seed: rng.random(),
    }
}

/// Re-digitise an image: translate by `shift`, apply the scanner response and
/// additive Gaussian noise. Pixels exposed by the shift are background.
pub fn simulate_rescan(image: &RgbImage, profile: &ScannerProfile, shift: (i32, i32), seed: u64) -> RgbImage {
    let (w, h) = image.dimensions();
    let mut lut = [[0f64; 256]; 3];
    for (c, table) in lut.iter_mut().enumerate() {
        for (v, out) in table.iter_mut().enumerate() {
            *out = profile.channel_gain[c] * (v as f64 / 255.0).powf(profile.gamma);
        }
    }
    let mut rng = rng_for(seed, labels!["rescan", profile.seed_offset]);
    let noise = (profile.noise_sigma > 0.0).then(|| Normal::new(0.0, profile.noise_sigma).expect("sigma is finite"));
    let mut out = RgbImage::new(w, h);
    for y in 0..h {
        let sy = y as i64 - shift.1 as i64;
        for x in 0..w {
            let sx = x as i64 - shift.0 as i64;
            let src = if sx >= 0 && sy >= 0 && sx < w as i64 && sy < h as i64 {
                image.get_pixel(sx as u32, sy as u32).0
            } else {
                BACKGROUND
            };
            let mut px = [0u8; 3];
            for c in 0..3 {
                let n = match &noise {
                    Some(d) => d.sample(&mut rng),
                    None => 0.0,
                };
                let v = (lut[c][src[c] as usize] + n).clamp(0.0, 1.0);
                px[c] = (v * 255.0).round() as u8;
            }
            out.put_pixel(x, y, Rgb(px));
        }
    }
    out
}

/// Settings for one generated cohort (all slides share a role).
#[derive(Debug, Clone)]
pub struct CohortConfig {
    pub role: Role,
    /// Prefix for slide, scan and patient ids, e.g. `T` gives `T0001`.
    pub id_prefix: String,
    pub n_slides: usize,
    pub positive_rate: f64,
    /// Fraction of negative slides that carry a borderline lesion.
    pub borderline_rate: f64,
    pub borderline_difficulty: f64,
    pub width: u32,
    pub height: u32,
    pub cohort_ids: Vec<String>,
    pub primary_scanner: ScannerProfile,
    pub rescan_scanners: Vec<ScannerProfile>,
    /// Fraction of slides rescanned on every rescan scanner.
    pub rescan_fraction: f64,
    pub max_shift: i32,
}

impl Default for CohortConfig {
    fn default() -> Self {
        let scanners = ScannerProfile::builtin();
        Self {
            role: Role::Train,
            id_prefix: "T".into(),
            n_slides: 10,
            positive_rate: 0.24,
            borderline_rate: 0.15,
            borderline_difficulty: 0.0,
            width: 1536,
            height: 1536,
            cohort_ids: vec!["C1".into()],
            primary_scanner: scanners[0].clone(),
            rescan_scanners: Vec::new(),
            rescan_fraction: 0.0,
            max_shift: 32,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_slides == 0 {
            return Err(Error::invalid("n_slides must be >= 1"));
        }
        for (name, r) in [
            ("positive_rate", self.positive_rate),
            ("borderline_rate", self.borderline_rate),
            ("borderline_difficulty", self.borderline_difficulty),
            ("rescan_fraction", self.rescan_fraction),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        if self.width < 256 || self.height < 256 {
            return Err(Error::invalid("slides must be at least 256x256"));
        }
        if self.max_shift < 0 || self.max_shift as f64 > CONTENT_MARGIN {
            return Err(Error::invalid(format!("max_shift must lie in [0, {CONTENT_MARGIN}]")));
        }
        if self.cohort_ids.is_empty() {
            return Err(Error::invalid("at least one cohort id is required"));
        }
        self.primary_scanner.validate()?;
        for s in &self.rescan_scanners {
            s.validate()?;
        }
        Ok(())
    }
}

/// One digitisation to render: scanner, integer offset of the slide on the
/// scanner stage, and the noise stream.
#[derive(Debug, Clone)]
pub struct ScanPlan {
    pub scan_id: String,
    pub profile: ScannerProfile,
    pub shift: (i32, i32),
    pub noise_seed: u64,
    pub is_primary: bool,
}

#[derive(Debug, Clone)]
pub struct GeneratedSlide {
    pub slide_id: String,
    pub spec: SlideSpec,
    pub scans: Vec<ScanPlan>,
}

impl GeneratedSlide {
    pub fn render_scan(&self, scan: usize) -> RgbImage {
        let plan = &self.scans[scan];
        let base = self.spec.render((0, 0));
        simulate_rescan(&base, &plan.profile, plan.shift, plan.noise_seed)
    }

    /// Render every scan, sharing one base rendering.
    pub fn render_all(&self) -> Vec<RgbImage> {
        let base = self.spec.render((0, 0));
        self.scans
            .iter()
            .map(|p| simulate_rescan(&base, &p.profile, p.shift, p.noise_seed))
            .collect()
    }

    /// Annotation in the primary scan's frame.
    pub fn annotation_mask(&self) -> Mask {
        let primary = self.scans.iter().find(|s| s.is_primary).expect("slide has a primary scan");
        self.spec.annotation_mask(primary.shift)
    }
}

/// A generated corpus. Images are rendered on demand; a 1536 px slide is
/// about 7 MB of pixels, so whole cohorts are never held in memory.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub manifest: DatasetManifest,
    pub slides: Vec<GeneratedSlide>,
}

impl Cohort {
    /// Ground-truth offsets, one row per scan: `(scan_id, dx, dy)`.
    pub fn offsets(&self) -> Vec<(String, i32, i32)> {
        self.slides
            .iter()
            .flat_map(|s| s.scans.iter().map(|p| (p.scan_id.clone(), p.shift.0, p.shift.1)))
            .collect()
    }

    pub fn offsets_csv(&self) -> String {
        let mut s = String::from("scan_id,dx,dy\n");
        for (id, dx, dy) in self.offsets() {
            s.push_str(&format!("{id},{dx},{dy}\n"));
        }
        s
    }

    pub fn slide(&self, slide_id: &str) -> Option<&GeneratedSlide> {
        self.slides.iter().find(|s| s.slide_id == slide_id)
    }

    /// Concatenate cohorts (e.g. one per role) into one corpus.
    pub fn merge(parts: Vec<Cohort>) -> Result<Cohort> {
        let mut slides = Vec::new();
        let mut records = Vec::new();
        for p in parts {
            records.extend(p.manifest.slides);
            slides.extend(p.slides);
        }
        Ok(Cohort {
            manifest: DatasetManifest::new(records)?,
            slides,
        })
    }
}

fn exact_count_flags(n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut flags = vec![false; n];
    for &i in idx.iter().take(count) {
        flags[i] = true;
    }
    flags
}

/// Number of slides in a class under exact-count sampling.
pub fn exact_count(n: usize, rate: f64) -> usize {
    ((rate * n as f64).round() as usize).min(n)
}

/// Generate a cohort. Exactly `round(positive_rate * n)` slides are positive
/// and exactly `round(borderline_rate * n_negative)` negatives are borderline.
pub fn generate_cohort(cfg: &CohortConfig, seed: u64) -> Result<Cohort> {
    cfg.validate()?;
    let n = cfg.n_slides;
    let prefix = cfg.id_prefix.as_str();
    let n_pos = exact_count(n, cfg.positive_rate);
    let positive = exact_count_flags(n, n_pos, &mut rng_for(seed, labels!["cohort", prefix, "positives"]));
    let negatives: Vec<usize> = (0..n).filter(|&i| !positive[i]).collect();
    let n_bl = exact_count(negatives.len(), cfg.borderline_rate);
    let bl_flags = exact_count_flags(negatives.len(), n_bl, &mut rng_for(seed, labels!["cohort", prefix, "borderline"]));
    let mut kinds = vec![SlideKind::Negative; n];
    for (i, &p) in positive.iter().enumerate() {
        if p {
            kinds[i] = SlideKind::Positive;
        }
    }
    for (k, &slide) in negatives.iter().enumerate() {
        if bl_flags[k] {
            kinds[slide] = SlideKind::Borderline;
        }
    }
    let rescanned = if cfg.rescan_scanners.is_empty() {
        vec![false; n]
    } else {
        let count = exact_count(n, cfg.rescan_fraction);
        exact_count_flags(n, count, &mut rng_for(seed, labels!["cohort", prefix, "rescans"]))
    };

    // Patients own 1-3 consecutive slides.
    let mut patient_of = Vec::with_capacity(n);
    let mut prng = rng_for(seed, labels!["cohort", prefix, "patients"]);
    let mut patient = 0usize;
    while patient_of.len() < n {
        let u: f64 = prng.random();
        let size = if u < 0.5 { 1 } else if u < 0.85 { 2 } else { 3 };
        for _ in 0..size {
            if patient_of.len() < n {
                patient_of.push(patient);
            }
        }
        patient += 1;
    }

    let slides: Vec<GeneratedSlide> = (0..n)
        .into_par_iter()
        .map(|i| {
            let slide_id = format!("{prefix}{:04}", i + 1);
            let mut rng = rng_for(seed, labels!["slide", prefix, i]);
            let spec = random_slide_spec(kinds[i], cfg.width, cfg.height, cfg.borderline_difficulty, &mut rng);
            let mut scans = vec![ScanPlan {
                scan_id: format!("{slide_id}-{}", cfg.primary_scanner.scanner_id),
                profile: cfg.primary_scanner.clone(),
                shift: (0, 0),
                noise_seed: derive_seed(seed, labels!["noise", &slide_id, &cfg.primary_scanner.scanner_id]),
                is_primary: true,
            }];
            if rescanned[i] {
                for p in &cfg.rescan_scanners {
                    let scan_id = format!("{slide_id}-{}", p.scanner_id);
                    let mut srng = rng_for(seed, labels!["shift", &scan_id]);
                    let m = cfg.max_shift;
                    let shift = (srng.random_range(-m..=m), srng.random_range(-m..=m));
                    scans.push(ScanPlan {
                        noise_seed: derive_seed(seed, labels!["noise", &scan_id]),
                        scan_id,
                        profile: p.clone(),
                        shift,
                        is_primary: false,
                    });
                }
            }
            GeneratedSlide { slide_id, spec, scans }
        })
        .collect();

    let records = slides
        .iter()
        .enumerate()
        .map(|(i, g)| SlideRecord {
            slide_id: g.slide_id.clone(),
            patient_id: format!("{prefix}P{:04}", patient_of[i] + 1),
            cohort_id: cfg.cohort_ids[patient_of[i] % cfg.cohort_ids.len()].clone(),
            role: cfg.role,
            label: g.spec.label(),
            borderline: g.spec.borderline(),
            scans: g
                .scans
                .iter()
                .map(|p| ScanRecord {
                    scan_id: p.scan_id.clone(),
                    scanner_id: p.profile.scanner_id.clone(),
                    image_path: format!("images/{}.png", p.scan_id),
                    is_primary: p.is_primary,
                    pixel_spacing: 1.0,
                })
                .collect(),
        })
        .collect();

    Ok(Cohort {
        manifest: DatasetManifest::new(records)?,
        slides,
    })
}

/// Simulated reader panel: per-slide binary calls from `n_raters` readers
/// with individual sensitivity and specificity. Borderline slides are called
/// positive more often than clean negatives.
pub fn simulate_raters(truth: &[(bool, bool)], n_raters: usize, seed: u64) -> Vec<Vec<bool>> {
    (0..n_raters)
        .map(|r| {
            let mut rng = rng_for(seed, labels!["rater", r]);
            let sens = rng.random_range(0.72..0.95);
            let spec = rng.random_range(0.78..0.96);
            let borderline_pos = rng.random_range(0.3..0.6);
            truth
                .iter()
                .map(|&(label, borderline)| {
                    let u: f64 = rng.random();
                    if label {
                        u < sens
                    } else if borderline {
                        u < borderline_pos
                    } else {
                        u >= spec
                    }
                })
                .collect()
        })
        .collect()
}
