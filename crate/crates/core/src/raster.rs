//! Binary masks and small raster helpers shared by tiling, registration and
//! the synthetic generator.

use image::{GrayImage, Luma, RgbImage};

use crate::error::{Error, Result};

/// Row-major binary mask.
#[derive(Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("count", &self.count())
            .finish()
    }
}

impl Mask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_vec(width: u32, height: u32, data: Vec<bool>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::invalid(format!(
                "mask buffer has {} entries, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = v;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn fraction(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.count() as f64 / self.data.len() as f64
    }

    /// 0 = background, 255 = foreground.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| Luma([if self.get(x, y) { 255 } else { 0 }]))
    }

    /// Pixels >= 128 become foreground.
    pub fn from_gray(img: &GrayImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.as_raw().iter().map(|&v| v >= 128).collect(),
        }
    }

    /// Summed-area table with a zero first row and column.
    pub fn integral(&self) -> IntegralImage {
        let w = self.width as usize;
        let h = self.height as usize;
        let stride = w + 1;
        let mut sums = vec![0u32; stride * (h + 1)];
        for y in 0..h {
            let mut row = 0u32;
            for x in 0..w {
                row += self.data[y * w + x] as u32;
                sums[(y + 1) * stride + x + 1] = sums[y * stride + x + 1] + row;
            }
        }
        IntegralImage { stride, sums }
    }
}

/// Constant-time rectangle counts over a [`Mask`].
pub struct IntegralImage {
    stride: usize,
    sums: Vec<u32>,
}

impl IntegralImage {
    /// Number of set pixels in `[x, x+w) x [y, y+h)`.
    pub fn rect_sum(&self, x: u32, y: u32, w: u32, h: u32) -> u32 {
        let (x0, y0) = (x as usize, y as usize);
        let (x1, y1) = (x0 + w as usize, y0 + h as usize);
        let s = |xx: usize, yy: usize| self.sums[yy * self.stride + xx];
        s(x1, y1) + s(x0, y0) - s(x0, y1) - s(x1, y0)
    }
}

/// Integer luminance (0..=255) with Rec. 601 weights.
#[inline]
pub fn luma_u8(p: [u8; 3]) -> u8 {
    ((299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32 + 500) / 1000) as u8
}

/// Luminance in [0, 1] with Rec. 601 weights.
#[inline]
pub fn luma_f64(p: [u8; 3]) -> f64 {
    (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0
}

pub fn luminance_u8(img: &RgbImage) -> Vec<u8> {
    img.pixels().map(|p| luma_u8(p.0)).collect()
}

/// Nearest-neighbour resample so that `from_spacing` µm/px becomes `to_spacing`.
pub fn resample_nearest(img: &RgbImage, from_spacing: f64, to_spacing: f64) -> RgbImage {
    if (from_spacing - to_spacing).abs() < 1e-12 {
        return img.clone();
    }
    let scale = from_spacing / to_spacing;
    let w = ((img.width() as f64) * scale).round().max(1.0) as u32;
    let h = ((img.height() as f64) * scale).round().max(1.0) as u32;
    RgbImage::from_fn(w, h, |x, y| {
        let sx = (((x as f64 + 0.5) / scale).floor() as u32).min(img.width() - 1);
        let sy = (((y as f64 + 0.5) / scale).floor() as u32).min(img.height() - 1);
        *img.get_pixel(sx, sy)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integral_matches_direct_count() {
        let m = Mask::from_fn(37, 23, |x, y| (x * 7 + y * 3) % 5 < 2);
        let ii = m.integral();
        for &(x, y, w, h) in &[(0, 0, 37, 23), (3, 4, 10, 7), (36, 22, 1, 1), (5, 0, 0, 3)] {
            let mut direct = 0;
            for yy in y..y + h {
                for xx in x..x + w {
                    direct += m.get(xx, yy) as u32;
                }
            }
            assert_eq!(ii.rect_sum(x, y, w, h), direct);
        }
    }

    #[test]
    fn gray_round_trip() {
        let m = Mask::from_fn(9, 4, |x, y| x > y);
        assert_eq!(Mask::from_gray(&m.to_gray()), m);
    }

    #[test]
    fn resample_identity_and_half() {
        let img = RgbImage::from_fn(8, 6, |x, y| image::Rgb([x as u8, y as u8, 0]));
        assert_eq!(resample_nearest(&img, 1.0, 1.0), img);
        let half = resample_nearest(&img, 0.5, 1.0);
        assert_eq!(half.dimensions(), (4, 3));
        assert_eq!(half.get_pixel(1, 1).0, [3, 3, 0]);
    }
}
