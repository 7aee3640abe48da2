//! Run configuration: one TOML file, every key optional, flags applied on top.

use std::path::Path;

use augsweep_core::augment::{
    AffineParams, AugOp, ClaheParams, JitterParams, RotationParams, Technique,
};
use augsweep_core::data::{DistortionSpec, GlyphSpec};
use augsweep_core::nn::ModelConfig;
use augsweep_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed for data, split, initialization, shuffling and augmentation.
    pub seed: u64,
    pub model: ModelSection,
    pub train: TrainSection,
    pub augment: AugmentSection,
    pub data: DataSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub input_size: usize,
    pub stage_channels: [usize; 4],
    pub stage_depths: [usize; 4],
    pub attention_dim: usize,
    pub attention_heads: usize,
    pub multiscale_kernel: usize,
    pub expand_ratio: usize,
    pub head_channels: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            input_size: m.input_size,
            stage_channels: m.stage_channels,
            stage_depths: m.stage_depths,
            attention_dim: m.attention_dim,
            attention_heads: m.attention_heads,
            multiscale_kernel: m.multiscale_kernel,
            expand_ratio: m.expand_ratio,
            head_channels: m.head_channels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            max_epochs: t.max_epochs,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            patience: t.patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    /// Enabled techniques by abbreviation (`RR`, `RA`, `C`, `CJ`).
    pub techniques: Vec<String>,
    pub rotation_min_deg: f64,
    pub rotation_max_deg: f64,
    pub affine_max_translate: f64,
    pub affine_max_shear_deg: f64,
    pub affine_one_sided: bool,
    pub fill: u8,
    pub clahe_tiles: usize,
    pub clahe_clip_limit: f64,
    pub jitter_brightness: f64,
    pub jitter_contrast: f64,
    pub jitter_saturation: f64,
    pub jitter_hue: f64,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let r = RotationParams::default();
        let a = AffineParams::default();
        let c = ClaheParams::default();
        let j = JitterParams::default();
        Self {
            techniques: ["RR", "RA", "C", "CJ"].map(String::from).to_vec(),
            rotation_min_deg: r.min_deg,
            rotation_max_deg: r.max_deg,
            affine_max_translate: a.max_translate_frac,
            affine_max_shear_deg: a.max_shear_deg,
            affine_one_sided: a.one_sided_translate,
            fill: r.fill,
            clahe_tiles: c.tiles_x,
            clahe_clip_limit: c.clip_limit,
            jitter_brightness: j.brightness,
            jitter_contrast: j.contrast,
            jitter_saturation: j.saturation,
            jitter_hue: j.hue,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Working resolution images are resized to on load.
    pub image_size: usize,
    pub synthetic_classes: usize,
    pub synthetic_per_class: usize,
    pub stroke_jitter: f64,
    /// Rotate and shift held-out test images once, after the split.
    pub distort_test: bool,
    pub distort_max_rotation_deg: f64,
    pub distort_max_shift: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let g = GlyphSpec::default();
        let d = DistortionSpec::default();
        Self {
            image_size: g.image_size,
            synthetic_classes: g.num_classes,
            synthetic_per_class: g.samples_per_class,
            stroke_jitter: g.stroke_jitter,
            distort_test: true,
            distort_max_rotation_deg: d.max_rotation_deg,
            distort_max_shift: d.max_shift_frac,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical TOML rendering.
    pub fn digest(&self) -> String {
        let h = Sha256::digest(self.to_toml().as_bytes());
        h.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn model_config(&self, num_classes: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            input_size: m.input_size,
            stage_channels: m.stage_channels,
            stage_depths: m.stage_depths,
            attention_dim: m.attention_dim,
            attention_heads: m.attention_heads,
            multiscale_kernel: m.multiscale_kernel,
            num_classes,
            expand_ratio: m.expand_ratio,
            head_channels: m.head_channels,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            max_epochs: t.max_epochs,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            patience: t.patience,
            seed: self.seed,
        }
    }

    pub fn glyph_spec(&self) -> GlyphSpec {
        GlyphSpec {
            num_classes: self.data.synthetic_classes,
            samples_per_class: self.data.synthetic_per_class,
            image_size: self.data.image_size,
            stroke_jitter: self.data.stroke_jitter,
            seed: self.seed,
        }
    }

    pub fn distortion(&self) -> Option<DistortionSpec> {
        self.data.distort_test.then_some(DistortionSpec {
            max_rotation_deg: self.data.distort_max_rotation_deg,
            max_shift_frac: self.data.distort_max_shift,
            fill: self.augment.fill,
        })
    }

    pub fn techniques(&self) -> Result<Vec<Technique>, CliError> {
        self.augment
            .techniques
            .iter()
            .map(|t| t.parse::<Technique>().map_err(|e| CliError::Config(e.to_string())))
            .collect()
    }

    /// Configured op for each enabled technique, in configuration order.
    pub fn ops(&self) -> Result<Vec<AugOp>, CliError> {
        let a = &self.augment;
        let ops: Vec<AugOp> = self
            .techniques()?
            .into_iter()
            .map(|t| match t {
                Technique::Clahe => AugOp::Clahe(ClaheParams {
                    tiles_x: a.clahe_tiles,
                    tiles_y: a.clahe_tiles,
                    clip_limit: a.clahe_clip_limit,
                    ..ClaheParams::default()
                }),
                Technique::RandomRotation => AugOp::Rotation(RotationParams {
                    min_deg: a.rotation_min_deg,
                    max_deg: a.rotation_max_deg,
                    fill: a.fill,
                }),
                Technique::RandomAffine => AugOp::Affine(AffineParams {
                    max_translate_frac: a.affine_max_translate,
                    max_shear_deg: a.affine_max_shear_deg,
                    fill: a.fill,
                    one_sided_translate: a.affine_one_sided,
                }),
                Technique::ColorJitter => AugOp::Jitter(JitterParams {
                    brightness: a.jitter_brightness,
                    contrast: a.jitter_contrast,
                    saturation: a.jitter_saturation,
                    hue: a.jitter_hue,
                }),
            })
            .collect();
        for op in &ops {
            op.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(ops)
    }

    /// Everything that can be checked without touching data.
    pub fn validate(&self) -> Result<(), CliError> {
        self.train_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.model_config(2)
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.data.image_size < 16 {
            return Err(CliError::Config("data.image_size must be at least 16".into()));
        }
        self.ops()?;
        Ok(())
    }
}
