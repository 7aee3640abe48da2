//! Gradient-weighted class activation maps and their heatmap overlays.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::image::ImageBuffer;
use crate::math;
use crate::nn::kernels::upsample_taps;
use crate::nn::{FeatureTap, Mode, Model, NnError, Tape};
use crate::tensor::{Tensor, TensorError};
use crate::trainer::{image_to_input, predict, TrainError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CamError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("target class {target} out of range for {classes} classes")]
    ClassOutOfRange { target: usize, classes: usize },
}

/// A rectified activation map scaled so its maximum is 1 (or all zeros).
#[derive(Debug, Clone, PartialEq)]
pub struct CamMap {
    pub height: usize,
    pub width: usize,
    /// Row-major, each in `[0, 1]`.
    pub values: Vec<f64>,
    pub source_layer: FeatureTap,
    pub target_class: usize,
    /// Largest value before normalization.
    pub raw_max: f64,
}

impl CamMap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// GradCAM on the last stage's output.
pub fn gradcam(model: &Model, img: &ImageBuffer, target_class: usize) -> Result<CamMap, CamError> {
    gradcam_at(model, img, target_class, FeatureTap::Stage4)
}

/// GradCAM on an arbitrary feature tap.
pub fn gradcam_at(model: &Model, img: &ImageBuffer, target_class: usize, layer: FeatureTap) -> Result<CamMap, CamError> {
    if !model.is_initialized() {
        return Err(NnError::Uninitialized.into());
    }
    let classes = model.config().num_classes;
    if target_class >= classes {
        return Err(CamError::ClassOutOfRange {
            target: target_class,
            classes,
        });
    }
    let size = model.config().input_size;
    let x = image_to_input(img, size)?;
    let x = x.reshape(&[1, 3, size, size]).map_err(NnError::from)?;
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let fp = model.forward_pass(&mut tape, xv, Mode::Eval)?;
    let feat = fp.taps[layer.index()];
    let act = tape.value(feat).clone();
    let &[_, c, h, w] = act.shape() else {
        return Err(NnError::from(TensorError::Invalid {
            op: "gradcam",
            reason: "feature map must be NCHW",
        })
        .into());
    };
    let mut seed = Tensor::zeros(&[1, classes]);
    seed.data_mut()[target_class] = 1.0;
    let grads = tape.backward_with_seed(fp.logits, seed)?;
    let g = grads.get_or_zeros(feat);
    let plane = h * w;
    let mut raw = vec![0.0; plane];
    for ch in 0..c {
        let gs = &g.data()[ch * plane..(ch + 1) * plane];
        let alpha = gs.iter().sum::<f64>() / plane as f64;
        let a = &act.data()[ch * plane..(ch + 1) * plane];
        for (r, &v) in raw.iter_mut().zip(a) {
            *r += alpha * v;
        }
    }
    raw.iter_mut().for_each(|v| *v = v.max(0.0));
    let raw_max = raw.iter().copied().fold(0.0, f64::max);
    if raw_max > 0.0 {
        raw.iter_mut().for_each(|v| *v /= raw_max);
    }
    Ok(CamMap {
        height: h,
        width: w,
        values: raw,
        source_layer: layer,
        target_class,
        raw_max,
    })
}

/// Blue-to-red ramp: `t = 0` is pure blue, `t = 1` pure red.
pub fn ramp(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    [255.0 * t, 0.0, 255.0 * (1.0 - t)]
}

/// Bilinearly resample the map to `width x height`.
pub fn upsample_map(map: &CamMap, width: usize, height: usize) -> Vec<f64> {
    let ty = upsample_taps(map.height, height);
    let tx = upsample_taps(map.width, width);
    let mut out = Vec::with_capacity(width * height);
    for &(y0, y1, fy) in &ty {
        for &(x0, x1, fx) in &tx {
            let top = map.get(x0, y0) * (1.0 - fx) + map.get(x1, y0) * fx;
            let bot = map.get(x0, y1) * (1.0 - fx) + map.get(x1, y1) * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Heatmap blended half and half over the grayscale input; RGB, same size
/// as `img`.
pub fn overlay(map: &CamMap, img: &ImageBuffer) -> ImageBuffer {
    let (w, h) = (img.width(), img.height());
    let up = upsample_map(map, w, h);
    let gray = img.to_gray();
    let mut px = Vec::with_capacity(w * h * 3);
    for (i, &t) in up.iter().enumerate() {
        let g = gray.pixels()[i] as f64;
        for c in ramp(t) {
            px.push(math::to_intensity(0.5 * g + 0.5 * c));
        }
    }
    ImageBuffer::new(w, h, 3, px).expect("same geometry")
}

/// A test sample the model gets wrong.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Misclassified {
    pub index: usize,
    pub predicted: usize,
    pub actual: usize,
}

/// Samples at `indices` whose eval-mode prediction differs from the label.
pub fn find_misclassified(model: &Model, data: &Dataset, indices: &[usize]) -> Result<Vec<Misclassified>, CamError> {
    if indices.is_empty() {
        return Ok(Vec::new());
    }
    let (_, preds) = predict(model, data, indices, 64)?;
    Ok(indices
        .iter()
        .zip(preds)
        .filter(|(&i, p)| data.samples[i].label != *p)
        .map(|(&i, p)| Misclassified {
            index: i,
            predicted: p,
            actual: data.samples[i].label,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_glyphs, GlyphSpec};
    use crate::nn::ModelConfig;

    fn cfg() -> ModelConfig {
        ModelConfig {
            input_size: 64,
            stage_channels: [4, 8, 8, 16],
            stage_depths: [1, 1, 2, 2],
            attention_dim: 4,
            attention_heads: 2,
            multiscale_kernel: 3,
            num_classes: 4,
            expand_ratio: 2,
            head_channels: 8,
        }
    }

    fn glyph(i: usize) -> ImageBuffer {
        let d = synth_glyphs(&GlyphSpec {
            num_classes: 4,
            samples_per_class: 2,
            image_size: 32,
            stroke_jitter: 0.05,
            seed: 1,
        })
        .unwrap();
        d.samples[i].image.clone()
    }

    #[test]
    fn shape_range_and_determinism() {
        let m = Model::seeded(cfg(), 2).unwrap();
        let img = glyph(3);
        for t in 0..4 {
            let cam = gradcam(&m, &img, t).unwrap();
            assert_eq!((cam.height, cam.width), (2, 2));
            assert!(cam.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let max = cam.values.iter().copied().fold(0.0, f64::max);
            assert!(max == 1.0 || cam.values.iter().all(|&v| v == 0.0));
            assert_eq!(gradcam(&m, &img, t).unwrap(), cam);
        }
        let stem = gradcam_at(&m, &img, 0, FeatureTap::Stem).unwrap();
        assert_eq!((stem.height, stem.width), (32, 32));
        assert_eq!(stem.source_layer, FeatureTap::Stem);
    }

    #[test]
    fn weights_are_spatial_mean_gradients() {
        // independent recomputation with a second tape
        let m = Model::seeded(cfg(), 4).unwrap();
        let img = glyph(0);
        let cam = gradcam_at(&m, &img, 1, FeatureTap::Stage3).unwrap();
        let x = image_to_input(&img, 64).unwrap().reshape(&[1, 3, 64, 64]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let fp = m.forward_pass(&mut tape, xv, Mode::Eval).unwrap();
        let f = fp.taps[3];
        let a = tape.value(f).clone();
        let mut seed = Tensor::zeros(&[1, 4]);
        seed.data_mut()[1] = 1.0;
        let g = tape.backward_with_seed(fp.logits, seed).unwrap().get(f).unwrap();
        let (c, h, w) = (a.shape()[1], a.shape()[2], a.shape()[3]);
        let mut raw = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for ch in 0..c {
                    let mut alpha = 0.0;
                    for yy in 0..h {
                        for xx in 0..w {
                            alpha += g.get(&[0, ch, yy, xx]);
                        }
                    }
                    s += alpha / (h * w) as f64 * a.get(&[0, ch, y, x]);
                }
                raw[y * w + x] = s.max(0.0);
            }
        }
        let mx = raw.iter().copied().fold(0.0, f64::max);
        assert!((mx - cam.raw_max).abs() <= 1e-12 * mx.max(1.0));
        for (r, v) in raw.iter().zip(&cam.values) {
            let expect = if mx > 0.0 { r / mx } else { 0.0 };
            assert!((expect - v).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_stage_output_gives_flat_map() {
        let mut m = Model::seeded(cfg(), 5).unwrap();
        let idx: Vec<usize> = m
            .params()
            .entries()
            .iter()
            .enumerate()
            .filter(|(_, e)| e.name.starts_with("stages.3.") && e.name.ends_with("project.weight"))
            .map(|(i, _)| i)
            .collect();
        assert!(!idx.is_empty());
        for i in idx {
            m.params_mut().value_mut(i).data_mut().fill(0.0);
        }
        for (i, t) in [(0, 0), (5, 2), (7, 3)] {
            let cam = gradcam(&m, &glyph(i), t).unwrap();
            let ones = cam.values.iter().all(|&v| v == 1.0);
            let zeros = cam.values.iter().all(|&v| v == 0.0);
            assert!(ones || zeros, "{:?}", cam.values);
        }
    }

    #[test]
    fn errors() {
        let img = glyph(0);
        let fresh = Model::new(cfg()).unwrap();
        assert_eq!(gradcam(&fresh, &img, 0), Err(CamError::Nn(NnError::Uninitialized)));
        let m = Model::seeded(cfg(), 1).unwrap();
        assert_eq!(
            gradcam(&m, &img, 4),
            Err(CamError::ClassOutOfRange { target: 4, classes: 4 })
        );
    }

    fn flat_map(values: Vec<f64>, h: usize, w: usize) -> CamMap {
        CamMap {
            height: h,
            width: w,
            values,
            source_layer: FeatureTap::Stage4,
            target_class: 0,
            raw_max: 1.0,
        }
    }

    #[test]
    fn zero_map_overlay_is_half_blue() {
        let img = glyph(2);
        let o = overlay(&flat_map(vec![0.0; 4], 2, 2), &img);
        assert_eq!((o.width(), o.height(), o.channels()), (32, 32, 3));
        for y in 0..32 {
            for x in 0..32 {
                let g = img.get(x, y, 0) as f64;
                assert_eq!(o.get(x, y, 0), math::to_intensity(0.5 * g));
                assert_eq!(o.get(x, y, 1), math::to_intensity(0.5 * g));
                assert_eq!(o.get(x, y, 2), math::to_intensity(0.5 * g + 127.5));
            }
        }
    }

    #[test]
    fn peak_lands_on_reddest_region() {
        let img = ImageBuffer::filled(40, 40, 1, 128).unwrap();
        for peak in 0..16 {
            let mut v = vec![0.1; 16];
            v[peak] = 1.0;
            let o = overlay(&flat_map(v, 4, 4), &img);
            let mut best = (0, 0, 0u8);
            for y in 0..40 {
                for x in 0..40 {
                    let r = o.get(x, y, 0);
                    if r > best.2 {
                        best = (x, y, r);
                    }
                }
            }
            assert_eq!((best.0 / 10, best.1 / 10), (peak % 4, peak / 4));
        }
    }

    #[test]
    fn perfect_model_has_no_misclassified() {
        let m = Model::seeded(cfg(), 6).unwrap();
        let mut d = synth_glyphs(&GlyphSpec {
            num_classes: 4,
            samples_per_class: 3,
            image_size: 32,
            stroke_jitter: 0.05,
            seed: 2,
        })
        .unwrap();
        let all: Vec<usize> = (0..d.len()).collect();
        let (_, preds) = predict(&m, &d, &all, 64).unwrap();
        for (s, p) in d.samples.iter_mut().zip(&preds) {
            s.label = *p;
        }
        assert!(find_misclassified(&m, &d, &all).unwrap().is_empty());
        d.samples[0].label = (preds[0] + 1) % 4;
        assert_eq!(
            find_misclassified(&m, &d, &all).unwrap(),
            vec![Misclassified {
                index: 0,
                predicted: preds[0],
                actual: (preds[0] + 1) % 4
            }]
        );
    }
}
