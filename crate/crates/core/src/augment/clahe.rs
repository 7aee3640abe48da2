//! Global and contrast-limited adaptive histogram equalization.
//!
//! Each tile's lookup table is the scaled CDF of its clipped histogram:
//! `lut(v) = round((L - 1) * cdf(bin(v)) / n)` with `L = 256` gray levels and
//! `n` the tile's pixel count. Counts above `ceil(clip_limit * n / bins)` are
//! cut and handed back evenly to all bins, the remainder one count per bin
//! starting at bin 0.

use alloc::vec;
use alloc::vec::Vec;

use super::{AugmentError, ClaheParams};
use crate::image::ImageBuffer;
use crate::math;

const LEVELS: usize = 256;

fn require_gray(op: &'static str, img: &ImageBuffer) -> Result<(), AugmentError> {
    if img.channels() != 1 {
        return Err(AugmentError::Channels {
            op,
            expected: 1,
            got: img.channels(),
        });
    }
    Ok(())
}

#[inline]
fn scaled_cdf(cumulative: u64, n: u64) -> u8 {
    math::to_intensity(((LEVELS - 1) as f64) * (cumulative as f64) / (n as f64))
}

/// Global histogram equalization without clipping.
pub fn histogram_equalize(img: &ImageBuffer) -> Result<ImageBuffer, AugmentError> {
    require_gray("histogram_equalize", img)?;
    let mut hist = [0u64; LEVELS];
    for &p in img.pixels() {
        hist[p as usize] += 1;
    }
    let n = img.pixels().len() as u64;
    let mut lut = [0u8; LEVELS];
    let mut cum = 0u64;
    for (v, &h) in hist.iter().enumerate() {
        cum += h;
        lut[v] = scaled_cdf(cum, n);
    }
    let px = img.pixels().iter().map(|&p| lut[p as usize]).collect();
    Ok(ImageBuffer::new(img.width(), img.height(), 1, px).expect("same geometry"))
}

/// Half-open pixel ranges of a tile grid along one axis.
fn tile_bounds(len: usize, tiles: usize) -> Vec<(usize, usize)> {
    (0..tiles)
        .map(|t| (t * len / tiles, (t + 1) * len / tiles))
        .collect()
}

fn clip_and_redistribute(hist: &mut [u64], limit: u64) {
    let bins = hist.len() as u64;
    let mut excess = 0u64;
    for h in hist.iter_mut() {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    while excess >= bins {
        let per = excess / bins;
        hist.iter_mut().for_each(|h| *h += per);
        excess -= per * bins;
    }
    for h in hist.iter_mut().take(excess as usize) {
        *h += 1;
    }
}

/// Per-tile lookup tables indexed `[ty][tx][intensity]`.
pub fn clahe_tile_luts(img: &ImageBuffer, p: &ClaheParams) -> Result<Vec<Vec<[u8; LEVELS]>>, AugmentError> {
    require_gray("clahe", img)?;
    p.validate()?;
    let (w, h) = (img.width(), img.height());
    if w < p.tiles_x || h < p.tiles_y {
        return Err(AugmentError::TooSmallForGrid {
            width: w,
            height: h,
            tiles_x: p.tiles_x,
            tiles_y: p.tiles_y,
        });
    }
    let xs = tile_bounds(w, p.tiles_x);
    let ys = tile_bounds(h, p.tiles_y);
    let bin_of = |v: u8| v as usize * p.bins / LEVELS;
    let mut luts = Vec::with_capacity(p.tiles_y);
    for &(y0, y1) in &ys {
        let mut row = Vec::with_capacity(p.tiles_x);
        for &(x0, x1) in &xs {
            let mut hist = vec![0u64; p.bins];
            for y in y0..y1 {
                for x in x0..x1 {
                    hist[bin_of(img.get(x, y, 0))] += 1;
                }
            }
            let n = ((x1 - x0) * (y1 - y0)) as u64;
            let limit = math::ceil(p.clip_limit * n as f64 / p.bins as f64).max(1.0);
            if limit < n as f64 {
                clip_and_redistribute(&mut hist, limit as u64);
            }
            let mut cdf = vec![0u8; p.bins];
            let mut cum = 0u64;
            for (b, &c) in hist.iter().enumerate() {
                cum += c;
                cdf[b] = scaled_cdf(cum, n);
            }
            let mut lut = [0u8; LEVELS];
            for (v, slot) in lut.iter_mut().enumerate() {
                *slot = cdf[bin_of(v as u8)];
            }
            row.push(lut);
        }
        luts.push(row);
    }
    Ok(luts)
}

/// Interpolation anchors along one axis: for every coordinate, the lower
/// tile index and the weight of the next tile.
fn axis_weights(bounds: &[(usize, usize)], len: usize) -> Vec<(usize, f64)> {
    let centers: Vec<f64> = bounds
        .iter()
        .map(|&(a, b)| (a as f64 + (b - 1) as f64) / 2.0)
        .collect();
    let last = centers.len() - 1;
    (0..len)
        .map(|i| {
            let x = i as f64;
            if x <= centers[0] {
                (0, 0.0)
            } else if x >= centers[last] {
                (last, 0.0)
            } else {
                let t = centers.iter().rposition(|&c| c <= x).unwrap_or(0).min(last - 1);
                (t, (x - centers[t]) / (centers[t + 1] - centers[t]))
            }
        })
        .collect()
}

/// Contrast-limited adaptive histogram equalization of a gray image.
pub fn clahe(img: &ImageBuffer, p: &ClaheParams) -> Result<ImageBuffer, AugmentError> {
    let luts = clahe_tile_luts(img, p)?;
    let (w, h) = (img.width(), img.height());
    let wx = axis_weights(&tile_bounds(w, p.tiles_x), w);
    let wy = axis_weights(&tile_bounds(h, p.tiles_y), h);
    let mut out = Vec::with_capacity(w * h);
    for (y, &(ty, fy)) in wy.iter().enumerate() {
        for (x, &(tx, fx)) in wx.iter().enumerate() {
            let v = img.get(x, y, 0) as usize;
            let m00 = luts[ty][tx][v] as f64;
            if fx == 0.0 && fy == 0.0 {
                out.push(m00 as u8);
                continue;
            }
            let tx1 = (tx + 1).min(p.tiles_x - 1);
            let ty1 = (ty + 1).min(p.tiles_y - 1);
            let m10 = luts[ty][tx1][v] as f64;
            let m01 = luts[ty1][tx][v] as f64;
            let m11 = luts[ty1][tx1][v] as f64;
            let top = m00 * (1.0 - fx) + m10 * fx;
            let bottom = m01 * (1.0 - fx) + m11 * fx;
            out.push(math::to_intensity(top * (1.0 - fy) + bottom * fy));
        }
    }
    Ok(ImageBuffer::new(w, h, 1, out).expect("same geometry"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Domain};
    use rand::Rng;

    fn gray(w: usize, h: usize, px: Vec<u8>) -> ImageBuffer {
        ImageBuffer::new(w, h, 1, px).unwrap()
    }

    #[test]
    fn he_constant_image_maps_to_white() {
        let img = gray(5, 3, vec![7; 15]);
        assert!(histogram_equalize(&img).unwrap().pixels().iter().all(|&v| v == 255));
    }

    #[test]
    fn he_two_levels() {
        let img = gray(4, 1, vec![0, 0, 255, 255]);
        // cdf(0) = 0.5 -> 127.5 rounds away from zero
        assert_eq!(histogram_equalize(&img).unwrap().pixels(), &[128, 128, 255, 255]);
    }

    #[test]
    fn he_uniform_ramp_stays_within_one_level() {
        // cdf(v) = (v + 1) / 256, so v maps to round(255 (v + 1) / 256)
        let img = gray(16, 16, (0..=255).collect());
        let out = histogram_equalize(&img).unwrap();
        for (v, &o) in out.pixels().iter().enumerate() {
            let expected = libm::round(255.0 * (v as f64 + 1.0) / 256.0) as u8;
            assert_eq!(o, expected);
            assert!(o.abs_diff(v as u8) <= 1);
        }
    }

    #[test]
    fn clahe_rejects_rgb_and_tiny_images() {
        let rgb = ImageBuffer::filled(16, 16, 3, 9).unwrap();
        assert!(matches!(
            clahe(&rgb, &ClaheParams::default()),
            Err(AugmentError::Channels { .. })
        ));
        let tiny = gray(4, 4, vec![0; 16]);
        assert!(matches!(
            clahe(&tiny, &ClaheParams::default()),
            Err(AugmentError::TooSmallForGrid { .. })
        ));
    }

    #[test]
    fn clahe_constant_image_stays_constant() {
        let img = gray(40, 33, vec![90; 40 * 33]);
        let out = clahe(&img, &ClaheParams::default()).unwrap();
        let first = out.pixels()[0];
        assert!(out.pixels().iter().all(|&v| v == first));
    }

    #[test]
    fn clahe_single_tile_without_clipping_matches_he() {
        let mut rng = substream(3, Domain::Probe, 0, 0);
        for _ in 0..20 {
            let (w, h) = (rng.gen_range(17..64), rng.gen_range(17..64));
            let img = gray(w, h, (0..w * h).map(|_| rng.gen()).collect());
            let p = ClaheParams {
                tiles_x: 1,
                tiles_y: 1,
                clip_limit: (w * h) as f64,
                bins: 256,
            };
            assert_eq!(clahe(&img, &p).unwrap(), histogram_equalize(&img).unwrap());
        }
    }

    #[test]
    fn redistribution_preserves_mass() {
        let mut hist = vec![0u64; 8];
        hist[2] = 50;
        hist[5] = 3;
        clip_and_redistribute(&mut hist, 10);
        assert_eq!(hist.iter().sum::<u64>(), 53);
        // 40 excess -> 5 per bin
        assert_eq!(hist, vec![5, 5, 15, 5, 5, 8, 5, 5]);
        let mut h2 = vec![0u64; 4];
        h2[0] = 9;
        clip_and_redistribute(&mut h2, 2);
        // 7 excess -> 1 per bin, 3 left for bins 0..3
        assert_eq!(h2, vec![4, 2, 2, 1]);
    }

    #[test]
    fn tile_luts_are_monotone() {
        let mut rng = substream(4, Domain::Probe, 0, 0);
        for bins in [256, 64, 7] {
            let img = gray(50, 37, (0..50 * 37).map(|_| rng.gen::<u8>() / 2).collect());
            let p = ClaheParams {
                tiles_x: 3,
                tiles_y: 4,
                clip_limit: 1.5,
                bins,
            };
            for row in clahe_tile_luts(&img, &p).unwrap() {
                for lut in row {
                    assert!(lut.windows(2).all(|w| w[0] <= w[1]));
                }
            }
        }
    }

    #[test]
    fn axis_weights_edges_use_nearest_tile() {
        let b = tile_bounds(10, 2);
        let w = axis_weights(&b, 10);
        assert_eq!(w[0], (0, 0.0));
        assert_eq!(w[9], (1, 0.0));
        // centers at 2 and 7
        assert_eq!(w[2], (0, 0.0));
        assert_eq!(w[7], (1, 0.0));
        assert_eq!(w[4], (0, 0.4));
    }
}
