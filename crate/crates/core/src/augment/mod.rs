//! The four augmentation techniques, their seeded samplers, pipeline
//! composition and enumeration of technique subsets.

mod clahe;
mod geometry;
mod jitter;

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::image::ImageBuffer;
use crate::rng::{self, Domain};

pub use clahe::{clahe, clahe_tile_luts, histogram_equalize};
pub use geometry::{apply_affine, rotate, sample_affine, sample_rotation, Affine2};
pub use jitter::{color_jitter_apply, sample_jitter, JitterFactors};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AugmentError {
    #[error("{op} requires a {expected}-channel image, got {got} channels")]
    Channels {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("image {width}x{height} is smaller than the {tiles_x}x{tiles_y} tile grid")]
    TooSmallForGrid {
        width: usize,
        height: usize,
        tiles_x: usize,
        tiles_y: usize,
    },
    #[error("affine matrix has a singular linear part (det = {0})")]
    Singular(f64),
    #[error("invalid {what}: {reason}")]
    InvalidParams { what: &'static str, reason: String },
    #[error("technique {0} listed more than once")]
    DuplicateTechnique(Technique),
    #[error("expected between 1 and 8 techniques, got {0}")]
    TechniqueCount(usize),
    #[error("unknown technique '{0}'")]
    UnknownTechnique(String),
}

fn invalid(what: &'static str, reason: impl ToString) -> AugmentError {
    AugmentError::InvalidParams {
        what,
        reason: reason.to_string(),
    }
}

/// Augmentation technique identifiers. The declaration order is the order in
/// which enabled techniques are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Technique {
    Clahe,
    RandomRotation,
    RandomAffine,
    ColorJitter,
}

impl Technique {
    /// Technique order used for table rows and labels.
    pub const TABLE_ORDER: [Technique; 4] = [
        Technique::RandomRotation,
        Technique::RandomAffine,
        Technique::Clahe,
        Technique::ColorJitter,
    ];

    pub fn abbreviation(self) -> &'static str {
        match self {
            Technique::Clahe => "C",
            Technique::RandomRotation => "RR",
            Technique::RandomAffine => "RA",
            Technique::ColorJitter => "CJ",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Technique::Clahe => "CLAHE",
            Technique::RandomRotation => "RandomRotation",
            Technique::RandomAffine => "RandomAffine",
            Technique::ColorJitter => "ColorJitter",
        }
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbreviation())
    }
}

impl FromStr for Technique {
    type Err = AugmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let all = [
            Technique::Clahe,
            Technique::RandomRotation,
            Technique::RandomAffine,
            Technique::ColorJitter,
        ];
        all.into_iter()
            .find(|x| x.abbreviation().eq_ignore_ascii_case(t) || x.name().eq_ignore_ascii_case(t))
            .ok_or_else(|| AugmentError::UnknownTechnique(t.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClaheParams {
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Bin ceiling as a multiple of the uniform bin height.
    pub clip_limit: f64,
    pub bins: usize,
}

impl Default for ClaheParams {
    fn default() -> Self {
        Self {
            tiles_x: 8,
            tiles_y: 8,
            clip_limit: 2.0,
            bins: 256,
        }
    }
}

impl ClaheParams {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.tiles_x == 0 || self.tiles_y == 0 {
            return Err(invalid("CLAHE params", "tile grid must be at least 1x1"));
        }
        if self.bins < 2 || self.bins > 256 {
            return Err(invalid("CLAHE params", "bins must be within [2, 256]"));
        }
        if self.clip_limit.is_nan() || self.clip_limit <= 0.0 {
            return Err(invalid("CLAHE params", "clip_limit must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationParams {
    pub min_deg: f64,
    pub max_deg: f64,
    pub fill: u8,
}

impl Default for RotationParams {
    fn default() -> Self {
        Self {
            min_deg: -45.0,
            max_deg: 45.0,
            fill: 255,
        }
    }
}

impl RotationParams {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let ok = |d: f64| d > -360.0 && d < 360.0;
        if !(ok(self.min_deg) && ok(self.max_deg)) {
            return Err(invalid("rotation params", "angles must lie in (-360, 360)"));
        }
        if self.min_deg > self.max_deg {
            return Err(invalid("rotation params", "min_deg exceeds max_deg"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    /// Translation bound as a fraction of each image dimension.
    pub max_translate_frac: f64,
    /// Bound on x-axis shear, in degrees.
    pub max_shear_deg: f64,
    pub fill: u8,
    /// Draw shifts from `[0, f]` instead of `[-f, f]`.
    pub one_sided_translate: bool,
}

impl Default for AffineParams {
    fn default() -> Self {
        Self {
            max_translate_frac: 0.1,
            max_shear_deg: 20.0,
            fill: 255,
            one_sided_translate: false,
        }
    }
}

impl AffineParams {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(0.0..=1.0).contains(&self.max_translate_frac) {
            return Err(invalid("affine params", "max_translate_frac must lie in [0, 1]"));
        }
        if !(self.max_shear_deg >= 0.0 && self.max_shear_deg < 90.0) {
            return Err(invalid("affine params", "max_shear_deg must lie in [0, 90)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterParams {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl Default for JitterParams {
    fn default() -> Self {
        Self {
            brightness: 0.2,
            contrast: 0.2,
            saturation: 0.2,
            hue: 0.1,
        }
    }
}

impl JitterParams {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(self.brightness >= 0.0 && self.contrast >= 0.0 && self.saturation >= 0.0) {
            return Err(invalid(
                "jitter params",
                "brightness, contrast and saturation must be non-negative",
            ));
        }
        if !(0.0..=0.5).contains(&self.hue) {
            return Err(invalid("jitter params", "hue must lie in [0, 0.5]"));
        }
        Ok(())
    }
}

/// One configured augmentation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugOp {
    Clahe(ClaheParams),
    Rotation(RotationParams),
    Affine(AffineParams),
    Jitter(JitterParams),
}

impl AugOp {
    pub fn technique(&self) -> Technique {
        match self {
            AugOp::Clahe(_) => Technique::Clahe,
            AugOp::Rotation(_) => Technique::RandomRotation,
            AugOp::Affine(_) => Technique::RandomAffine,
            AugOp::Jitter(_) => Technique::ColorJitter,
        }
    }

    /// The technique with its default parameters.
    pub fn default_for(t: Technique) -> Self {
        match t {
            Technique::Clahe => AugOp::Clahe(ClaheParams::default()),
            Technique::RandomRotation => AugOp::Rotation(RotationParams::default()),
            Technique::RandomAffine => AugOp::Affine(AffineParams::default()),
            Technique::ColorJitter => AugOp::Jitter(JitterParams::default()),
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        match self {
            AugOp::Clahe(p) => p.validate(),
            AugOp::Rotation(p) => p.validate(),
            AugOp::Affine(p) => p.validate(),
            AugOp::Jitter(p) => p.validate(),
        }
    }

    /// Draw this op's random parameters from `rng` and apply it.
    pub fn apply(&self, img: &ImageBuffer, rng: &mut impl Rng) -> Result<ImageBuffer, AugmentError> {
        match self {
            AugOp::Clahe(p) => apply_clahe_any(img, p),
            AugOp::Rotation(p) => {
                let angle = sample_rotation(p, rng);
                Ok(rotate(img, angle, p.fill))
            }
            AugOp::Affine(p) => {
                let m = sample_affine(p, img.width(), img.height(), rng);
                apply_affine(img, &m, p.fill)
            }
            AugOp::Jitter(p) => {
                let f = sample_jitter(p, rng);
                Ok(color_jitter_apply(img, f.brightness, f.contrast, f.saturation, f.hue))
            }
        }
    }
}

/// CLAHE on gray images directly and on the HSV value plane of RGB images.
fn apply_clahe_any(img: &ImageBuffer, p: &ClaheParams) -> Result<ImageBuffer, AugmentError> {
    if img.channels() == 1 {
        return clahe(img, p);
    }
    let value: Vec<u8> = img
        .pixels()
        .chunks_exact(3)
        .map(|px| px[0].max(px[1]).max(px[2]))
        .collect();
    let plane = ImageBuffer::new(img.width(), img.height(), 1, value).expect("plane geometry");
    let eq = clahe(&plane, p)?;
    let mut out = Vec::with_capacity(img.pixels().len());
    for (px, &v) in img.pixels().chunks_exact(3).zip(eq.pixels()) {
        let mut hsv = crate::image::rgb_to_hsv(px[0], px[1], px[2]);
        hsv.v = v as f64 / 255.0;
        let (r, g, b) = crate::image::hsv_to_rgb(hsv);
        out.extend_from_slice(&[r, g, b]);
    }
    Ok(ImageBuffer::new(img.width(), img.height(), 3, out).expect("same geometry"))
}

/// An ordered, seeded set of augmentation ops.
///
/// Ops always run in the order CLAHE, rotation, affine, jitter no matter how
/// the pipeline was built. Each `(epoch, sample_index)` gets its own random
/// stream derived from `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationPipeline {
    ops: Vec<AugOp>,
    seed: u64,
    label: String,
}

impl AugmentationPipeline {
    pub fn new(ops: Vec<AugOp>, seed: u64) -> Result<Self, AugmentError> {
        let label = label_for(ops.iter().map(|o| o.technique()));
        Self::with_label(ops, seed, label)
    }

    /// The identity pipeline ("None").
    pub fn empty(seed: u64) -> Self {
        Self {
            ops: Vec::new(),
            seed,
            label: String::from("None"),
        }
    }

    fn with_label(mut ops: Vec<AugOp>, seed: u64, label: String) -> Result<Self, AugmentError> {
        for op in &ops {
            op.validate()?;
        }
        ops.sort_by_key(|o| o.technique());
        if let Some(w) = ops.windows(2).find(|w| w[0].technique() == w[1].technique()) {
            return Err(AugmentError::DuplicateTechnique(w[0].technique()));
        }
        Ok(Self { ops, seed, label })
    }

    pub fn ops(&self) -> &[AugOp] {
        &self.ops
    }

    pub fn techniques(&self) -> Vec<Technique> {
        self.ops.iter().map(|o| o.technique()).collect()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Apply every op in canonical order, drawing parameters from `rng`.
    pub fn apply(&self, img: &ImageBuffer, rng: &mut impl Rng) -> Result<ImageBuffer, AugmentError> {
        let mut cur = img.clone();
        for op in &self.ops {
            cur = op.apply(&cur, rng)?;
        }
        Ok(cur)
    }

    /// Apply with the substream reserved for `(epoch, sample_index)`.
    pub fn apply_for_sample(
        &self,
        img: &ImageBuffer,
        epoch: u64,
        sample_index: u64,
    ) -> Result<ImageBuffer, AugmentError> {
        if self.ops.is_empty() {
            return Ok(img.clone());
        }
        let mut rng = rng::substream(self.seed, Domain::Augment, epoch, sample_index);
        self.apply(img, &mut rng)
    }
}

/// Apply `pipeline` with an explicit generator.
pub fn pipeline_apply(
    pipeline: &AugmentationPipeline,
    img: &ImageBuffer,
    rng: &mut impl Rng,
) -> Result<ImageBuffer, AugmentError> {
    pipeline.apply(img, rng)
}

/// Row label in table order, e.g. `"RA + CJ"`, or `"None"` when empty.
pub fn label_for(techniques: impl IntoIterator<Item = Technique>) -> String {
    let mut ts: Vec<Technique> = techniques.into_iter().collect();
    ts.sort_by_key(|t| Technique::TABLE_ORDER.iter().position(|x| x == t));
    if ts.is_empty() {
        return String::from("None");
    }
    let parts: Vec<&str> = ts.iter().map(|t| t.abbreviation()).collect();
    parts.join(" + ")
}

/// Every subset of `techniques` as a pipeline: ordered by subset size, then
/// by position in `techniques`, starting with the empty "None" pipeline.
pub fn enumerate_combinations(
    techniques: &[AugOp],
    seed: u64,
) -> Result<Vec<AugmentationPipeline>, AugmentError> {
    let n = techniques.len();
    if n == 0 || n > 8 {
        return Err(AugmentError::TechniqueCount(n));
    }
    for (i, a) in techniques.iter().enumerate() {
        if techniques[..i].iter().any(|b| b.technique() == a.technique()) {
            return Err(AugmentError::DuplicateTechnique(a.technique()));
        }
    }
    let mut masks: Vec<u32> = (0..(1u32 << n)).collect();
    // size first, then lexicographic over member positions
    masks.sort_by(|&a, &b| {
        a.count_ones().cmp(&b.count_ones()).then_with(|| {
            let pa: Vec<u32> = (0..n as u32).filter(|i| a & (1 << i) != 0).collect();
            let pb: Vec<u32> = (0..n as u32).filter(|i| b & (1 << i) != 0).collect();
            pa.cmp(&pb)
        })
    });
    masks
        .into_iter()
        .map(|mask| {
            let members: Vec<AugOp> = (0..n)
                .filter(|i| mask & (1 << i) != 0)
                .map(|i| techniques[i])
                .collect();
            let label = if members.is_empty() {
                String::from("None")
            } else {
                let parts: Vec<&str> =
                    members.iter().map(|o| o.technique().abbreviation()).collect();
                parts.join(" + ")
            };
            AugmentationPipeline::with_label(members, seed, label)
        })
        .collect()
}
