//! In-memory datasets and the synthetic glyph corpus.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::augment::{apply_affine, Affine2};
use crate::image::ImageBuffer;
use crate::math;
use crate::rng::{substream, uniform, Domain};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("dataset is empty")]
    Empty,
    #[error("sample {index}: class {label} out of range for {classes} classes")]
    LabelOutOfRange { index: usize, label: usize, classes: usize },
    #[error("sample {index}: {got} channels, dataset uses {expected}")]
    MixedChannels { index: usize, expected: usize, got: usize },
    #[error("sample {index}: {got}x{got_h} pixels, dataset uses {expected}x{expected_h}")]
    MixedSizes {
        index: usize,
        expected: usize,
        expected_h: usize,
        got: usize,
        got_h: usize,
    },
    #[error("invalid glyph spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: ImageBuffer,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub samples: Vec<Sample>,
    pub class_names: Vec<String>,
}

impl Dataset {
    /// Check labels, channel counts and image sizes.
    pub fn new(name: impl Into<String>, samples: Vec<Sample>, class_names: Vec<String>) -> Result<Self, DataError> {
        let first = samples.first().ok_or(DataError::Empty)?;
        let (c, w, h) = (first.image.channels(), first.image.width(), first.image.height());
        for (index, s) in samples.iter().enumerate() {
            if s.label >= class_names.len() {
                return Err(DataError::LabelOutOfRange {
                    index,
                    label: s.label,
                    classes: class_names.len(),
                });
            }
            if s.image.channels() != c {
                return Err(DataError::MixedChannels {
                    index,
                    expected: c,
                    got: s.image.channels(),
                });
            }
            if s.image.width() != w || s.image.height() != h {
                return Err(DataError::MixedSizes {
                    index,
                    expected: w,
                    expected_h: h,
                    got: s.image.width(),
                    got_h: s.image.height(),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            samples,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Side length of the (square) images, or the width otherwise.
    pub fn image_size(&self) -> usize {
        self.samples.first().map_or(0, |s| s.image.width())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlyphSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub image_size: usize,
    /// Control-point noise as a fraction of the image side.
    pub stroke_jitter: f64,
    pub seed: u64,
}

impl Default for GlyphSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            samples_per_class: 200,
            image_size: 64,
            stroke_jitter: 0.05,
            seed: 0,
        }
    }
}

impl GlyphSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.num_classes == 0 || self.num_classes > TEMPLATES.len() {
            return Err(DataError::InvalidSpec(format!(
                "num_classes must be in 1..={}",
                TEMPLATES.len()
            )));
        }
        if self.samples_per_class == 0 {
            return Err(DataError::InvalidSpec("samples_per_class must be positive".into()));
        }
        if self.image_size < 16 {
            return Err(DataError::InvalidSpec("image_size must be at least 16".into()));
        }
        if !(self.stroke_jitter.is_finite() && (0.0..=0.5).contains(&self.stroke_jitter)) {
            return Err(DataError::InvalidSpec("stroke_jitter must be in [0, 0.5]".into()));
        }
        Ok(())
    }
}

type Pt = (f64, f64);

/// A straight segment (two points) or a quadratic Bezier (three points).
#[derive(Clone, Copy)]
enum Stroke {
    Line(Pt, Pt),
    Curve(Pt, Pt, Pt),
}

use Stroke::{Curve, Line};

const MATRA: Stroke = Line((0.2, 0.25), (0.8, 0.25));

/// Class templates in unit coordinates, y pointing down. Several share the
/// top bar and differ only in the strokes below it.
const TEMPLATES: [&[Stroke]; 10] = [
    &[MATRA, Line((0.7, 0.25), (0.7, 0.8))],
    &[MATRA, Line((0.7, 0.25), (0.7, 0.8)), Curve((0.7, 0.55), (0.2, 0.5), (0.45, 0.8))],
    &[MATRA, Line((0.5, 0.25), (0.5, 0.8))],
    &[MATRA, Curve((0.5, 0.25), (0.85, 0.55), (0.4, 0.75))],
    &[Line((0.25, 0.25), (0.75, 0.78)), Line((0.75, 0.25), (0.25, 0.78))],
    &[
        Line((0.25, 0.25), (0.5, 0.78)),
        Line((0.5, 0.78), (0.75, 0.25)),
        Line((0.3, 0.5), (0.7, 0.5)),
    ],
    &[Curve((0.5, 0.22), (0.1, 0.5), (0.5, 0.8)), Curve((0.5, 0.22), (0.9, 0.5), (0.5, 0.8))],
    &[Curve((0.7, 0.25), (0.2, 0.3), (0.5, 0.5)), Curve((0.5, 0.5), (0.8, 0.7), (0.3, 0.78))],
    &[
        Line((0.3, 0.22), (0.3, 0.78)),
        Line((0.3, 0.78), (0.75, 0.78)),
        Curve((0.3, 0.5), (0.75, 0.4), (0.6, 0.7)),
    ],
    &[
        MATRA,
        Line((0.35, 0.25), (0.35, 0.8)),
        Line((0.65, 0.25), (0.65, 0.8)),
        Line((0.35, 0.55), (0.65, 0.55)),
    ],
];

const CURVE_SEGMENTS: usize = 16;

fn segments(stroke: &Stroke, out: &mut Vec<(Pt, Pt)>) {
    match *stroke {
        Line(a, b) => out.push((a, b)),
        Curve(a, c, b) => {
            let at = |t: f64| {
                let u = 1.0 - t;
                (
                    u * u * a.0 + 2.0 * u * t * c.0 + t * t * b.0,
                    u * u * a.1 + 2.0 * u * t * c.1 + t * t * b.1,
                )
            };
            let mut prev = a;
            for i in 1..=CURVE_SEGMENTS {
                let p = at(i as f64 / CURVE_SEGMENTS as f64);
                out.push((prev, p));
                prev = p;
            }
        }
    }
}

fn point_segment_distance(p: Pt, a: Pt, b: Pt) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    math::sqrt(cx * cx + cy * cy)
}

/// Rasterize pixel-space segments dark-on-white with a linear edge ramp.
fn rasterize(size: usize, segs: &[(Pt, Pt)], width: f64) -> ImageBuffer {
    let half = width / 2.0;
    ImageBuffer::from_fn(size, size, 1, |x, y, _| {
        let p = (x as f64, y as f64);
        let d = segs
            .iter()
            .map(|&(a, b)| point_segment_distance(p, a, b))
            .fold(f64::INFINITY, f64::min);
        let coverage = (half + 0.5 - d).clamp(0.0, 1.0);
        math::to_intensity(255.0 * (1.0 - coverage))
    })
    .expect("non-empty glyph")
}

fn render(template: &[Stroke], size: usize, jitter: f64, class: usize, sample: usize, seed: u64) -> ImageBuffer {
    let mut rng = substream(seed, Domain::Glyph, class as u64, sample as u64);
    let scale = (size - 1) as f64;
    let mut move_pt = |p: Pt| {
        let jx = uniform(&mut rng, -jitter, jitter);
        let jy = uniform(&mut rng, -jitter, jitter);
        ((p.0 + jx) * scale, (p.1 + jy) * scale)
    };
    let mut segs = Vec::new();
    for s in template {
        let moved = match *s {
            Line(a, b) => Line(move_pt(a), move_pt(b)),
            Curve(a, c, b) => Curve(move_pt(a), move_pt(c), move_pt(b)),
        };
        segments(&moved, &mut segs);
    }
    let width = if jitter > 0.0 {
        2.0 + uniform(&mut rng, -1.0, 1.0)
    } else {
        2.0
    };
    rasterize(size, &segs, width)
}

/// Generate `num_classes x samples_per_class` gray glyphs, class-major.
pub fn synth_glyphs(spec: &GlyphSpec) -> Result<Dataset, DataError> {
    spec.validate()?;
    let mut samples = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
    for (class, template) in TEMPLATES.iter().take(spec.num_classes).enumerate() {
        for i in 0..spec.samples_per_class {
            samples.push(Sample {
                image: render(template, spec.image_size, spec.stroke_jitter, class, i, spec.seed),
                label: class,
            });
        }
    }
    let names = (0..spec.num_classes).map(|c| format!("glyph{c}")).collect();
    Dataset::new("synthetic-glyphs", samples, names)
}

/// Bounds of the one-off rotation and shift applied to held-out images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistortionSpec {
    pub max_rotation_deg: f64,
    /// Shift bound as a fraction of the image side, per axis.
    pub max_shift_frac: f64,
    pub fill: u8,
}

impl Default for DistortionSpec {
    fn default() -> Self {
        Self {
            max_rotation_deg: 10.0,
            max_shift_frac: 0.1,
            fill: 255,
        }
    }
}

/// Rotate and shift the images at `indices` once, each by its own seeded draw.
pub fn distort_samples(data: &mut Dataset, indices: &[usize], spec: &DistortionSpec, seed: u64) {
    for &i in indices {
        let img = &data.samples[i].image;
        let mut rng = substream(seed, Domain::Distort, i as u64, 0);
        let angle = uniform(&mut rng, -spec.max_rotation_deg, spec.max_rotation_deg);
        let fx = spec.max_shift_frac * img.width() as f64;
        let fy = spec.max_shift_frac * img.height() as f64;
        let dx = uniform(&mut rng, -fx, fx);
        let dy = uniform(&mut rng, -fy, fy);
        let m = Affine2::translation(dx, dy).compose(&Affine2::rotation_deg(angle));
        let out = apply_affine(img, &m, spec.fill).expect("rotation is invertible");
        data.samples[i].image = out;
    }
}
