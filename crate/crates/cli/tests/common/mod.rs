//! Helpers shared by the CLI integration tests and the acceptance suite.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use augsweep::config::RunConfig;
use augsweep::io::write_png;
use augsweep_core::data::{synth_glyphs, GlyphSpec};
use augsweep_core::image::ImageBuffer;
use augsweep_core::nn::Model;
use augsweep_core::tensor::Tensor;
use augsweep_core::trainer::image_to_input;

pub const TINY: &str = r#"
seed = 5

[model]
input_size = 32
stage_channels = [4, 8, 8, 16]
stage_depths = [1, 1, 2, 2]
attention_dim = 4
attention_heads = 2
multiscale_kernel = 3
expand_ratio = 2
head_channels = 8

[train]
max_epochs = 2
learning_rate = 2e-3
batch_size = 16
patience = 2

[data]
image_size = 32
synthetic_classes = 3
synthetic_per_class = 10
"#;

pub fn augsweep(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_augsweep"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, TINY).unwrap();
    p
}

pub fn glyph_png(dir: &Path, w: usize, h: usize) -> PathBuf {
    let d = synth_glyphs(&GlyphSpec {
        num_classes: 4,
        samples_per_class: 1,
        image_size: 48,
        stroke_jitter: 0.05,
        seed: 2,
    })
    .unwrap();
    let img = augsweep_core::image::resize_bilinear(&d.samples[3].image, w, h).unwrap();
    let p = dir.join("glyph.png");
    write_png(&p, &img).unwrap();
    p
}

pub fn pngs(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    v.sort();
    v
}

pub fn assert_ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

pub fn predict_one(model: &Model, img: &ImageBuffer) -> usize {
    let x = Tensor::stack(&[image_to_input(img, model.config().input_size).unwrap()]).unwrap();
    let l = model.forward(&x).unwrap();
    let d = l.data();
    (0..d.len()).fold(0, |b, i| if d[i] > d[b] { i } else { b })
}

/// A class tree labelled by the model's own predictions, so the model is
/// perfect on it.
pub fn self_labelled_tree(root: &Path, cfg: &RunConfig) -> Model {
    let glyphs = synth_glyphs(&GlyphSpec {
        num_classes: 10,
        samples_per_class: 8,
        image_size: 32,
        stroke_jitter: 0.05,
        seed: 9,
    })
    .unwrap();
    for seed in 0..100 {
        let model = Model::seeded(cfg.model_config(2), seed).unwrap();
        let preds: Vec<usize> = glyphs.samples.iter().map(|s| predict_one(&model, &s.image)).collect();
        if (0..2).all(|c| preds.iter().filter(|&&p| p == c).count() >= 10) {
            for (i, (s, p)) in glyphs.samples.iter().zip(&preds).enumerate() {
                let d = root.join(format!("c{p}"));
                std::fs::create_dir_all(&d).unwrap();
                write_png(&d.join(format!("{i:03}.png")), &s.image).unwrap();
            }
            return model;
        }
    }
    panic!("no seed splits the glyphs between both classes");
}

