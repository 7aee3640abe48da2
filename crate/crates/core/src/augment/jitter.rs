//! Brightness, contrast, saturation and hue jitter.

use alloc::vec::Vec;

use rand::Rng;

use super::JitterParams;
use crate::image::{hsv_to_rgb_f64, rgb_to_hsv_f64, ImageBuffer};
use crate::math;
use crate::rng::uniform;

/// Concrete factors drawn by [`sample_jitter`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterFactors {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl JitterFactors {
    pub const IDENTITY: JitterFactors = JitterFactors {
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
        hue: 0.0,
    };
}

fn factor_range(spread: f64, rng: &mut impl Rng) -> f64 {
    uniform(rng, (1.0 - spread).max(0.0), 1.0 + spread)
}

/// Brightness, contrast and saturation factors from
/// `[max(0, 1 - x), 1 + x]`, hue shift from `[-hue, hue]`, drawn in that order.
pub fn sample_jitter(p: &JitterParams, rng: &mut impl Rng) -> JitterFactors {
    JitterFactors {
        brightness: factor_range(p.brightness, rng),
        contrast: factor_range(p.contrast, rng),
        saturation: factor_range(p.saturation, rng),
        hue: uniform(rng, -p.hue, p.hue),
    }
}

/// Apply brightness, contrast, saturation and hue in that fixed order.
///
/// Work happens on real-valued channels clamped to `[0, 255]` after every
/// step; rounding to intensities happens once at the end. Saturation and hue
/// leave gray (1-channel) images untouched.
pub fn color_jitter_apply(img: &ImageBuffer, b: f64, c: f64, s: f64, h: f64) -> ImageBuffer {
    let ch = img.channels();
    let clamp = |v: f64| v.clamp(0.0, 255.0);
    let mut px: Vec<f64> = img.pixels().iter().map(|&v| v as f64).collect();

    if b != 1.0 {
        px.iter_mut().for_each(|v| *v = clamp(b * *v));
    }

    if c != 1.0 {
        let mean = if ch == 1 {
            px.iter().sum::<f64>() / px.len() as f64
        } else {
            px.chunks_exact(3).map(|p| gray_f64(p[0], p[1], p[2])).sum::<f64>()
                / (px.len() / 3) as f64
        };
        px.iter_mut().for_each(|v| *v = clamp(mean + c * (*v - mean)));
    }

    if ch == 3 && s != 1.0 {
        for p in px.chunks_exact_mut(3) {
            let g = gray_f64(p[0], p[1], p[2]);
            for v in p.iter_mut() {
                *v = clamp(g + s * (*v - g));
            }
        }
    }

    if ch == 3 && h != 0.0 {
        for p in px.chunks_exact_mut(3) {
            let mut hsv = rgb_to_hsv_f64(p[0], p[1], p[2]);
            if hsv.s > 0.0 {
                hsv.h = math::rem_euclid(hsv.h + h, 1.0);
                let (r, g, bb) = hsv_to_rgb_f64(hsv);
                p[0] = clamp(r);
                p[1] = clamp(g);
                p[2] = clamp(bb);
            }
        }
    }

    let out = px.into_iter().map(math::to_intensity).collect();
    ImageBuffer::new(img.width(), img.height(), ch, out).expect("same geometry")
}

#[inline]
fn gray_f64(r: f64, g: f64, b: f64) -> f64 {
    // same weights as ImageBuffer::to_gray
    0.299 * r + 0.587 * g + 0.114 * b
}
