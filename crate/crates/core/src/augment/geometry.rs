//! Rotation and affine warps by inverse mapping about the image center.

use alloc::vec::Vec;

use rand::Rng;

use super::{AffineParams, AugmentError, RotationParams};
use crate::image::{bilinear_sample_f64, ImageBuffer};
use crate::math;
use crate::rng::uniform;

/// A 2x3 affine matrix `[[a, b, tx], [c, d, ty]]` acting on coordinates
/// relative to the image center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine2(pub [[f64; 3]; 2]);

impl Affine2 {
    pub const IDENTITY: Affine2 = Affine2([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);

    pub fn translation(dx: f64, dy: f64) -> Self {
        Affine2([[1.0, 0.0, dx], [0.0, 1.0, dy]])
    }

    /// Counter-clockwise (as displayed, y pointing down) rotation.
    pub fn rotation_deg(angle: f64) -> Self {
        let (s, c) = (math::sin(math::deg_to_rad(angle)), math::cos(math::deg_to_rad(angle)));
        Affine2([[c, s, 0.0], [-s, c, 0.0]])
    }

    /// Shear along the x axis by `angle` degrees.
    pub fn shear_x_deg(angle: f64) -> Self {
        Affine2([[1.0, math::tan(math::deg_to_rad(angle)), 0.0], [0.0, 1.0, 0.0]])
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Affine2) -> Affine2 {
        let (a, b) = (&self.0, &first.0);
        let mut out = [[0.0; 3]; 2];
        for r in 0..2 {
            for c in 0..3 {
                out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c];
            }
            out[r][2] += a[r][2];
        }
        Affine2(out)
    }

    pub fn inverse(&self) -> Result<Affine2, AugmentError> {
        let det = self.det();
        if !det.is_finite() || det.abs() < 1e-12 {
            return Err(AugmentError::Singular(det));
        }
        let m = &self.0;
        let (a, b, c, d) = (m[1][1] / det, -m[0][1] / det, -m[1][0] / det, m[0][0] / det);
        let tx = -(a * m[0][2] + b * m[1][2]);
        let ty = -(c * m[0][2] + d * m[1][2]);
        Ok(Affine2([[a, b, tx], [c, d, ty]]))
    }

    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
        )
    }
}

/// Inverse-warp `img` through `inv` (destination -> source, centered coords).
fn warp(img: &ImageBuffer, inv: &Affine2, fill: u8) -> ImageBuffer {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(w * h * c);
    let mut buf = [0.0; 3];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = inv.apply(x as f64 - cx, y as f64 - cy);
            bilinear_sample_f64(img, sx + cx, sy + cy, fill, &mut buf);
            out.extend(buf[..c].iter().map(|&v| math::to_intensity(v)));
        }
    }
    ImageBuffer::new(w, h, c, out).expect("same geometry")
}

/// Warp with the forward matrix `m` (source -> destination, about the center).
pub fn apply_affine(img: &ImageBuffer, m: &Affine2, fill: u8) -> Result<ImageBuffer, AugmentError> {
    let inv = m.inverse()?;
    if *m == Affine2::IDENTITY {
        return Ok(img.clone());
    }
    Ok(warp(img, &inv, fill))
}

/// Rotate about the center by `angle_deg` (counter-clockwise as displayed),
/// keeping the input dimensions.
pub fn rotate(img: &ImageBuffer, angle_deg: f64, fill: u8) -> ImageBuffer {
    if angle_deg == 0.0 {
        return img.clone();
    }
    let inv = Affine2::rotation_deg(-angle_deg);
    warp(img, &inv, fill)
}

pub fn sample_rotation(p: &RotationParams, rng: &mut impl Rng) -> f64 {
    uniform(rng, p.min_deg, p.max_deg)
}

/// Draw a shear-then-translate matrix for a `width x height` image.
pub fn sample_affine(p: &AffineParams, width: usize, height: usize, rng: &mut impl Rng) -> Affine2 {
    let fx = p.max_translate_frac * width as f64;
    let fy = p.max_translate_frac * height as f64;
    let (dx, dy) = if p.one_sided_translate {
        (uniform(rng, 0.0, fx), uniform(rng, 0.0, fy))
    } else {
        (uniform(rng, -fx, fx), uniform(rng, -fy, fy))
    };
    let shear = uniform(rng, -p.max_shear_deg, p.max_shear_deg);
    Affine2::translation(dx, dy).compose(&Affine2::shear_x_deg(shear))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Domain};

    fn noise(w: usize, h: usize, c: usize, seed: u64) -> ImageBuffer {
        let mut r = substream(seed, Domain::Probe, 1, 0);
        ImageBuffer::from_fn(w, h, c, |_, _, _| r.gen()).unwrap()
    }

    #[test]
    fn identity_warps_are_exact() {
        let img = noise(17, 11, 3, 1);
        assert_eq!(rotate(&img, 0.0, 0), img);
        assert_eq!(apply_affine(&img, &Affine2::IDENTITY, 0).unwrap(), img);
        // the generic warp path is exact for the identity too
        assert_eq!(warp(&img, &Affine2::IDENTITY, 0), img);
    }

    #[test]
    fn full_turn_is_near_identity() {
        let img = noise(20, 20, 1, 2);
        assert!(rotate(&img, 360.0, 0).max_abs_diff(&img) <= 1);
    }

    #[test]
    fn quarter_turn_matches_index_permutation() {
        let n = 15;
        let img = noise(n, n, 1, 3);
        let rot = rotate(&img, 90.0, 0);
        let oracle = ImageBuffer::from_fn(n, n, 1, |x, y, _| img.get(n - 1 - y, x, 0)).unwrap();
        assert!(rot.max_abs_diff(&oracle) <= 1);
    }

    #[test]
    fn translation_by_width_fills() {
        let img = noise(12, 7, 1, 4);
        let out = apply_affine(&img, &Affine2::translation(12.0, 0.0), 200).unwrap();
        assert!(out.pixels().iter().all(|&v| v == 200));
    }

    #[test]
    fn singular_matrix_rejected() {
        let img = noise(4, 4, 1, 5);
        let m = Affine2([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]]);
        assert!(matches!(apply_affine(&img, &m, 0), Err(AugmentError::Singular(_))));
    }

    #[test]
    fn inverse_round_trips() {
        let m = Affine2::translation(3.0, -2.0)
            .compose(&Affine2::shear_x_deg(15.0))
            .compose(&Affine2::rotation_deg(30.0));
        let id = m.compose(&m.inverse().unwrap());
        for r in 0..2 {
            for c in 0..3 {
                assert!((id.0[r][c] - Affine2::IDENTITY.0[r][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_samplers() {
        let mut rng = substream(0, Domain::Probe, 0, 0);
        let p = RotationParams { min_deg: 17.0, max_deg: 17.0, fill: 0 };
        assert_eq!(sample_rotation(&p, &mut rng), 17.0);
        let a = AffineParams {
            max_translate_frac: 0.0,
            max_shear_deg: 0.0,
            ..AffineParams::default()
        };
        assert_eq!(sample_affine(&a, 64, 64, &mut rng), Affine2::IDENTITY);
    }

    #[test]
    fn one_sided_translation_is_non_negative() {
        let mut rng = substream(1, Domain::Probe, 0, 0);
        let p = AffineParams { one_sided_translate: true, ..AffineParams::default() };
        for _ in 0..1000 {
            let m = sample_affine(&p, 64, 32, &mut rng);
            assert!(m.0[0][2] >= 0.0 && m.0[0][2] <= 6.4);
            assert!(m.0[1][2] >= 0.0 && m.0[1][2] <= 3.2);
        }
    }
}
