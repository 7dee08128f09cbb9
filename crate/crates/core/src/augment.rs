//! Pixel-side patch augmentation and dihedral test-time views.

use image::codecs::jpeg::{JpegDecoder, JpegEncoder};
use image::{DynamicImage, ImageDecoder, Rgb, RgbImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::seeds::rng_for;

/// One element of the dihedral group acting on square patches: optional
/// horizontal flip, then optional vertical flip, then `rot90` quarter turns
/// clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dihedral {
    pub flip_h: bool,
    pub flip_v: bool,
    pub rot90: u8,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral {
        flip_h: false,
        flip_v: false,
        rot90: 0,
    };

    pub fn sample(rng: &mut ChaCha8Rng) -> Self {
        Dihedral {
            flip_h: rng.random(),
            flip_v: rng.random(),
            rot90: rng.random_range(0..4),
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.flip_h && !self.flip_v && self.rot90 % 4 == 0
    }

    pub fn apply(&self, img: &RgbImage) -> RgbImage {
        let mut out = img.clone();
        if self.flip_h {
            image::imageops::flip_horizontal_in_place(&mut out);
        }
        if self.flip_v {
            image::imageops::flip_vertical_in_place(&mut out);
        }
        match self.rot90 % 4 {
            1 => image::imageops::rotate90(&out),
            2 => {
                image::imageops::rotate180_in_place(&mut out);
                out
            }
            3 => image::imageops::rotate270(&out),
            _ => out,
        }
    }
}

/// Test-time views for one slide: view 0 is the identity, the rest are drawn
/// from a stream keyed by `(seed, slide_id, view)`.
pub fn tta_transforms(n_views: usize, seed: u64, slide_id: &str) -> Vec<Dihedral> {
    (0..n_views)
        .map(|v| {
            if v == 0 {
                Dihedral::IDENTITY
            } else {
                Dihedral::sample(&mut rng_for(seed, labels!["tta", slide_id, v]))
            }
        })
        .collect()
}

/// Training augmentation toggles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub random_crop: bool,
    pub flips: bool,
    pub rot90: bool,
    pub color_jitter: bool,
    pub noise: bool,
    pub jpeg: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            random_crop: true,
            flips: true,
            rot90: true,
            color_jitter: true,
            noise: true,
            jpeg: true,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            random_crop: false,
            flips: false,
            rot90: false,
            color_jitter: false,
            noise: false,
            jpeg: false,
        }
    }
}

const JPEG_QUALITY: u8 = 75;
const JPEG_PROB: f64 = 0.3;

/// Quality-75 JPEG encode/decode round trip.
pub fn jpeg_round_trip(img: &RgbImage) -> RgbImage {
    let mut buf = Vec::new();
    let enc = JpegEncoder::new_with_quality(&mut buf, JPEG_QUALITY);
    if DynamicImage::ImageRgb8(img.clone()).write_with_encoder(enc).is_err() {
        return img.clone();
    }
    let decoded = JpegDecoder::new(std::io::Cursor::new(&buf)).and_then(|d| {
        let (w, h) = d.dimensions();
        let mut px = vec![0u8; d.total_bytes() as usize];
        d.read_image(&mut px)?;
        Ok(RgbImage::from_raw(w, h, px))
    });
    match decoded {
        Ok(Some(out)) => out,
        _ => img.clone(),
    }
}

/// One random training view of a patch. The output has the input's size.
pub fn augment_patch(img: &RgbImage, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> RgbImage {
    let (w, h) = img.dimensions();
    let mut out = img.clone();
    if cfg.random_crop {
        let side = (w.min(h) as f64 * rng.random_range(0.85..=1.0)).round() as u32;
        let x0 = rng.random_range(0..=w - side);
        let y0 = rng.random_range(0..=h - side);
        // Nearest-neighbour rescale of the crop back to the patch size.
        let src = out;
        out = RgbImage::from_fn(w, h, |x, y| {
            let sx = x0 + (x as u64 * side as u64 / w as u64) as u32;
            let sy = y0 + (y as u64 * side as u64 / h as u64) as u32;
            *src.get_pixel(sx, sy)
        });
    }
    let d = Dihedral {
        flip_h: cfg.flips && rng.random(),
        flip_v: cfg.flips && rng.random(),
        rot90: if cfg.rot90 { rng.random_range(0..4) } else { 0 },
    };
    if !d.is_identity() {
        out = d.apply(&out);
    }
    if cfg.color_jitter {
        let gamma: f64 = rng.random_range(0.9..1.1);
        let gain: [f64; 3] = [0; 3].map(|_| rng.random_range(0.94..1.06));
        let lut: [[u8; 256]; 3] = std::array::from_fn(|c| {
            std::array::from_fn(|v| ((gain[c] * (v as f64 / 255.0).powf(gamma)).clamp(0.0, 1.0) * 255.0).round() as u8)
        });
        for px in out.pixels_mut() {
            *px = Rgb([lut[0][px[0] as usize], lut[1][px[1] as usize], lut[2][px[2] as usize]]);
        }
    }
    if cfg.noise {
        // Per-pixel multiplicative jitter and additive Gaussian noise, shared
        // across channels.
        let sigma: f64 = rng.random_range(0.0..0.02) * 255.0;
        let normal = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
        for px in out.pixels_mut() {
            let mult: f64 = rng.random_range(0.97..1.03);
            let n = normal.sample(rng);
            *px = Rgb(px.0.map(|v| (v as f64 * mult + n).round().clamp(0.0, 255.0) as u8));
        }
    }
    if cfg.jpeg && rng.random::<f64>() < JPEG_PROB {
        out = jpeg_round_trip(&out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn test_img() -> RgbImage {
        RgbImage::from_fn(16, 16, |x, y| Rgb([(x * 16) as u8, (y * 16) as u8, ((x + y) * 8) as u8]))
    }

    #[test]
    fn dihedral_group_laws() {
        let img = test_img();
        assert_eq!(Dihedral::IDENTITY.apply(&img), img);
        let r = Dihedral {
            flip_h: false,
            flip_v: false,
            rot90: 1,
        };
        let mut x = img.clone();
        for _ in 0..4 {
            x = r.apply(&x);
        }
        assert_eq!(x, img);
        let hv = Dihedral {
            flip_h: true,
            flip_v: true,
            rot90: 0,
        };
        let r2 = Dihedral { rot90: 2, ..r };
        assert_eq!(hv.apply(&img), r2.apply(&img));
    }

    #[test]
    fn tta_view_zero_is_identity_and_deterministic() {
        let v = tta_transforms(5, 9, "S1");
        assert_eq!(v[0], Dihedral::IDENTITY);
        assert_eq!(v, tta_transforms(5, 9, "S1"));
        assert_eq!(v.len(), 5);
    }

    #[test]
    fn augmentation_keeps_size_and_is_seeded() {
        let img = test_img();
        let cfg = AugmentConfig::default();
        let a = augment_patch(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(1));
        let b = augment_patch(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        assert_eq!(a.dimensions(), img.dimensions());
        let none = augment_patch(&img, &AugmentConfig::none(), &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(none, img);
    }
}
