//! Raster images, HSV conversion and bilinear resampling.
//!
//! Pixel `(x, y)` has its center at the integer coordinate `(x, y)`. Real to
//! intensity conversion rounds half away from zero and clamps to `[0, 255]`.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ImageError {
    #[error("image dimensions must be positive, got {width}x{height}")]
    EmptyImage { width: usize, height: usize },
    #[error("unsupported channel count {0}; expected 1 or 3")]
    Channels(usize),
    #[error("pixel buffer has {got} bytes, expected {expected}")]
    BufferLength { expected: usize, got: usize },
}

/// A `width x height` raster with 1 (gray) or 3 (RGB) interleaved 8-bit channels.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl core::fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "ImageBuffer({}x{}x{})", self.width, self.height, self.channels)
    }
}

impl ImageBuffer {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<u8>,
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyImage { width, height });
        }
        if channels != 1 && channels != 3 {
            return Err(ImageError::Channels(channels));
        }
        let expected = width * height * channels;
        if pixels.len() != expected {
            return Err(ImageError::BufferLength {
                expected,
                got: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self, ImageError> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Build from a per-`(x, y, channel)` function.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Result<Self, ImageError> {
        let mut pixels = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    pixels.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, pixels)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.pixels[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_geometry(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Luma plane (ITU-R 601 weights); gray images are returned as-is.
    pub fn to_gray(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let pixels = self
            .pixels
            .chunks_exact(3)
            .map(|p| math::to_intensity(luma(p[0], p[1], p[2])))
            .collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 1,
            pixels,
        }
    }

    /// Replicate a gray image into three identical channels.
    pub fn to_rgb(&self) -> ImageBuffer {
        if self.channels == 3 {
            return self.clone();
        }
        let pixels = self.pixels.iter().flat_map(|&v| [v, v, v]).collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 3,
            pixels,
        }
    }

    /// Largest per-sample absolute difference against an image of equal geometry.
    pub fn max_abs_diff(&self, other: &ImageBuffer) -> u8 {
        assert!(self.same_geometry(other), "geometry mismatch");
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(&a, &b)| a.abs_diff(b))
            .max()
            .unwrap_or(0)
    }
}

#[inline]
pub(crate) fn luma(r: u8, g: u8, b: u8) -> f64 {
    0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64
}

/// Hue, saturation and value; hue is a fraction of the full circle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HsvPixel {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

pub fn rgb_to_hsv(r: u8, g: u8, b: u8) -> HsvPixel {
    rgb_to_hsv_f64(r as f64, g as f64, b as f64)
}

pub fn hsv_to_rgb(p: HsvPixel) -> (u8, u8, u8) {
    let (r, g, b) = hsv_to_rgb_f64(p);
    (
        math::to_intensity(r),
        math::to_intensity(g),
        math::to_intensity(b),
    )
}

/// Hexcone HSV from real-valued channels on the `[0, 255]` scale.
pub fn rgb_to_hsv_f64(r: f64, g: f64, b: f64) -> HsvPixel {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max / 255.0;
    if max <= 0.0 || delta <= 0.0 {
        return HsvPixel { h: 0.0, s: 0.0, v };
    }
    let s = delta / max;
    let sector = if max == r {
        math::rem_euclid((g - b) / delta, 6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let mut h = sector / 6.0;
    if h >= 1.0 {
        h -= 1.0;
    }
    HsvPixel { h, s, v }
}

/// Inverse of [`rgb_to_hsv_f64`], producing channels on the `[0, 255]` scale.
pub fn hsv_to_rgb_f64(p: HsvPixel) -> (f64, f64, f64) {
    let v = p.v * 255.0;
    if p.s <= 0.0 {
        return (v, v, v);
    }
    let h6 = math::rem_euclid(p.h, 1.0) * 6.0;
    let sector = math::floor(h6);
    let f = h6 - sector;
    let lo = v * (1.0 - p.s);
    let falling = v * (1.0 - p.s * f);
    let rising = v * (1.0 - p.s * (1.0 - f));
    match sector as i64 {
        0 => (v, rising, lo),
        1 => (falling, v, lo),
        2 => (lo, v, rising),
        3 => (lo, falling, v),
        4 => (rising, lo, v),
        _ => (v, lo, falling),
    }
}

/// Bilinear sample at continuous `(x, y)` returning unrounded channel values.
///
/// Neighbors outside the raster contribute `fill`; points outside the pixel
/// footprint `[-0.5, w - 0.5] x [-0.5, h - 0.5]` are pure `fill`.
pub fn bilinear_sample_f64(img: &ImageBuffer, x: f64, y: f64, fill: u8, out: &mut [f64]) {
    let c = img.channels;
    let w = img.width as f64;
    let h = img.height as f64;
    let fillf = fill as f64;
    if !(x >= -0.5 && x <= w - 0.5 && y >= -0.5 && y <= h - 0.5) {
        out[..c].iter_mut().for_each(|o| *o = fillf);
        return;
    }
    let x0 = math::floor(x);
    let y0 = math::floor(y);
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let fetch = |xi: i64, yi: i64, ch: usize| -> f64 {
        if xi < 0 || yi < 0 || xi >= img.width as i64 || yi >= img.height as i64 {
            fillf
        } else {
            img.get(xi as usize, yi as usize, ch) as f64
        }
    };
    for (ch, o) in out[..c].iter_mut().enumerate() {
        let mut acc = fetch(x0, y0, ch) * (1.0 - fx) * (1.0 - fy);
        if fx != 0.0 {
            acc += fetch(x0 + 1, y0, ch) * fx * (1.0 - fy);
        }
        if fy != 0.0 {
            acc += fetch(x0, y0 + 1, ch) * (1.0 - fx) * fy;
            if fx != 0.0 {
                acc += fetch(x0 + 1, y0 + 1, ch) * fx * fy;
            }
        }
        *o = acc;
    }
}

/// Bilinear sample rounded to intensities. Only the first `channels` entries
/// of the result are meaningful.
pub fn bilinear_sample(img: &ImageBuffer, x: f64, y: f64, fill: u8) -> [u8; 3] {
    let mut buf = [0.0; 3];
    bilinear_sample_f64(img, x, y, fill, &mut buf);
    [
        math::to_intensity(buf[0]),
        math::to_intensity(buf[1]),
        math::to_intensity(buf[2]),
    ]
}

/// Resize with bilinear interpolation, pixel-area aligned (half-pixel centers).
pub fn resize_bilinear(img: &ImageBuffer, width: usize, height: usize) -> Result<ImageBuffer, ImageError> {
    if width == 0 || height == 0 {
        return Err(ImageError::EmptyImage { width, height });
    }
    if width == img.width && height == img.height {
        return Ok(img.clone());
    }
    let sx = img.width as f64 / width as f64;
    let sy = img.height as f64 / height as f64;
    let c = img.channels;
    let mut out = vec![0u8; width * height * c];
    let mut buf = [0.0; 3];
    for y in 0..height {
        let src_y = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (img.height - 1) as f64);
        for x in 0..width {
            let src_x = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (img.width - 1) as f64);
            bilinear_sample_f64(img, src_x, src_y, 0, &mut buf);
            for ch in 0..c {
                out[(y * width + x) * c + ch] = math::to_intensity(buf[ch]);
            }
        }
    }
    ImageBuffer::new(width, height, c, out)
}

/// Convert to a `(channels, height, width)` tensor scaled to `[0, 1]`.
///
/// A gray image is replicated when `out_channels` is 3.
pub fn to_tensor(img: &ImageBuffer, out_channels: usize) -> Tensor {
    let (w, h, c) = (img.width, img.height, img.channels);
    let plane = w * h;
    let mut data = vec![0.0; out_channels * plane];
    for oc in 0..out_channels {
        let src_c = if c == 1 { 0 } else { oc.min(c - 1) };
        let dst = &mut data[oc * plane..(oc + 1) * plane];
        for (i, d) in dst.iter_mut().enumerate() {
            *d = img.pixels[i * c + src_c] as f64 / 255.0;
        }
    }
    Tensor::new(&[out_channels, h, w], data).expect("shape matches data")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray(w: usize, h: usize, px: &[u8]) -> ImageBuffer {
        ImageBuffer::new(w, h, 1, px.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_buffers() {
        assert_eq!(
            ImageBuffer::new(2, 2, 1, vec![0; 3]),
            Err(ImageError::BufferLength { expected: 4, got: 3 })
        );
        assert_eq!(ImageBuffer::new(2, 2, 4, vec![0; 16]), Err(ImageError::Channels(4)));
        assert!(matches!(ImageBuffer::new(0, 2, 1, vec![]), Err(ImageError::EmptyImage { .. })));
    }

    #[test]
    fn hsv_known_values() {
        assert_eq!(rgb_to_hsv(255, 0, 0), HsvPixel { h: 0.0, s: 1.0, v: 1.0 });
        assert_eq!(rgb_to_hsv(128, 128, 128), HsvPixel { h: 0.0, s: 0.0, v: 128.0 / 255.0 });
        assert_eq!(rgb_to_hsv(0, 255, 255), HsvPixel { h: 0.5, s: 1.0, v: 1.0 });
        assert_eq!(hsv_to_rgb(HsvPixel { h: 0.73, s: 0.0, v: 1.0 }), (255, 255, 255));
        assert_eq!(hsv_to_rgb(HsvPixel { h: 0.0, s: 1.0, v: 1.0 }), (255, 0, 0));
        assert_eq!(hsv_to_rgb(HsvPixel { h: 1.0 / 3.0, s: 1.0, v: 1.0 }), (0, 255, 0));
    }

    #[test]
    fn hsv_round_trip_exhaustive() {
        for r in 0..=255u8 {
            for g in 0..=255u8 {
                for b in 0..=255u8 {
                    assert_eq!(hsv_to_rgb(rgb_to_hsv(r, g, b)), (r, g, b), "({r},{g},{b})");
                }
            }
        }
    }

    #[test]
    fn hsv_ranges() {
        for r in (0..=255u8).step_by(5) {
            for g in (0..=255u8).step_by(5) {
                for b in (0..=255u8).step_by(5) {
                    let p = rgb_to_hsv(r, g, b);
                    assert!((0.0..1.0).contains(&p.h));
                    assert!((0.0..=1.0).contains(&p.s));
                    assert!((0.0..=1.0).contains(&p.v));
                }
            }
        }
    }

    #[test]
    fn bilinear_integer_points_and_fill() {
        let img = gray(3, 2, &[1, 2, 3, 4, 5, 6]);
        assert_eq!(bilinear_sample(&img, 2.0, 1.0, 9)[0], 6);
        assert_eq!(bilinear_sample(&img, 0.0, 0.0, 9)[0], 1);
        assert_eq!(bilinear_sample(&img, -100.0, 0.0, 9)[0], 9);
        assert_eq!(bilinear_sample(&img, 0.0, 2.6, 9)[0], 9);
        // half a pixel outside blends with the fill value
        assert_eq!(bilinear_sample(&img, -0.5, 0.0, 9)[0], 5);
    }

    #[test]
    fn bilinear_midpoint_rounds_half_away() {
        let img = gray(2, 2, &[0, 0, 255, 255]);
        assert_eq!(bilinear_sample(&img, 0.5, 0.5, 0)[0], 128);
    }

    #[test]
    fn tensor_conversion() {
        let img = gray(2, 1, &[51, 255]);
        let t = to_tensor(&img, 3);
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert!((t.get(&[2, 0, 0]) - 0.2).abs() < 1e-15);
        assert_eq!(t.get(&[1, 0, 1]), 1.0);
        let zeros = to_tensor(&ImageBuffer::filled(4, 4, 3, 0).unwrap(), 3);
        assert!(zeros.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn resize_identity_and_shape() {
        let img = ImageBuffer::from_fn(5, 4, 1, |x, y, _| (x * 10 + y) as u8).unwrap();
        assert_eq!(resize_bilinear(&img, 5, 4).unwrap(), img);
        let r = resize_bilinear(&img, 10, 8).unwrap();
        assert_eq!((r.width(), r.height()), (10, 8));
    }

    proptest! {
        #[test]
        fn tensor_values_in_unit_interval(px in proptest::collection::vec(any::<u8>(), 12)) {
            let img = ImageBuffer::new(4, 3, 1, px).unwrap();
            let t = to_tensor(&img, 3);
            prop_assert_eq!(t.shape(), &[3, 3, 4]);
            prop_assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn bilinear_is_continuous(px in proptest::collection::vec(any::<u8>(), 64),
                                  x in 0.0f64..7.0, y in 0.0f64..7.0) {
            let img = ImageBuffer::new(8, 8, 1, px).unwrap();
            let mut a = [0.0; 3];
            let mut b = [0.0; 3];
            bilinear_sample_f64(&img, x, y, 0, &mut a);
            bilinear_sample_f64(&img, x + 1e-6, y + 1e-6, 0, &mut b);
            prop_assert!((a[0] - b[0]).abs() < 1.0);
        }
    }
}
