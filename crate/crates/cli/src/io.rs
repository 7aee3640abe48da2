//! PNG codec, class-per-directory loading and checkpoint files.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use augsweep_core::data::{Dataset, Sample};
use augsweep_core::image::{resize_bilinear, ImageBuffer};
use augsweep_core::nn::{decode_checkpoint, encode_checkpoint, CheckpointError, Model, ModelConfig};

use crate::CliError;

fn at(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Decode an 8- or 16-bit PNG to a gray or RGB buffer. Palettes are
/// expanded and alpha is composited over white.
pub fn read_png(path: &Path) -> Result<ImageBuffer, CliError> {
    let file = File::open(path).map_err(|e| at(path, e))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(|e| at(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| at(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| at(path, e))?;
    buf.truncate(info.buffer_size());
    let (w, h) = (info.width as usize, info.height as usize);
    let (src_c, out_c) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => return Err(at(path, "palette was not expanded")),
    };
    // rows may be padded when the line size is not w * channels
    let line = info.line_size;
    let mut px = Vec::with_capacity(w * h * out_c);
    for y in 0..h {
        let row = &buf[y * line..y * line + w * src_c];
        for p in row.chunks_exact(src_c) {
            if src_c == out_c {
                px.extend_from_slice(p);
            } else {
                let a = p[src_c - 1] as u32;
                for &v in &p[..out_c] {
                    px.push(((v as u32 * a + 255 * (255 - a) + 127) / 255) as u8);
                }
            }
        }
    }
    ImageBuffer::new(w, h, out_c, px).map_err(|e| at(path, e))
}

pub fn write_png(path: &Path, img: &ImageBuffer) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| at(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width() as u32, img.height() as u32);
    enc.set_color(if img.channels() == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| at(path, e))?;
    writer.write_image_data(img.pixels()).map_err(|e| at(path, e))?;
    writer.finish().map_err(|e| at(path, e))
}

fn visible_entries(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| at(dir, e))? {
        let entry = entry.map_err(|e| at(dir, e))?;
        if entry.file_name().to_string_lossy().starts_with('.') {
            continue;
        }
        out.push(entry.path());
    }
    out.sort();
    Ok(out)
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Load `<root>/<class>/*.png`, classes in lexicographic order and samples
/// in path order, every image resized to `size x size`.
///
/// If any image has color, gray images are promoted to RGB.
pub fn load_image_dir(root: &Path, size: usize) -> Result<Dataset, CliError> {
    let classes: Vec<PathBuf> = visible_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if classes.is_empty() {
        return Err(at(root, "no class directories"));
    }
    let mut names = Vec::with_capacity(classes.len());
    let mut samples = Vec::new();
    for (label, dir) in classes.iter().enumerate() {
        names.push(dir.file_name().unwrap_or_default().to_string_lossy().into_owned());
        let files = visible_entries(dir)?;
        if files.is_empty() {
            return Err(at(dir, "empty class directory"));
        }
        for f in files {
            if !f.is_file() || !is_png(&f) {
                return Err(at(&f, "unsupported file; only PNG images are read"));
            }
            let img = read_png(&f)?;
            let img = resize_bilinear(&img, size, size).map_err(|e| at(&f, e))?;
            samples.push(Sample { image: img, label });
        }
    }
    if samples.iter().any(|s| s.image.channels() == 3) {
        for s in &mut samples {
            if s.image.channels() == 1 {
                s.image = s.image.to_rgb();
            }
        }
    }
    let name = root.file_name().unwrap_or_default().to_string_lossy().into_owned();
    Dataset::new(name, samples, names).map_err(|e| at(root, e))
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), CliError> {
    std::fs::write(path, encode_checkpoint(model)).map_err(|e| at(path, e))
}

/// Read a checkpoint, optionally insisting on a configuration.
pub fn load_checkpoint(path: &Path, expected: Option<&ModelConfig>) -> Result<Model, CliError> {
    let bytes = std::fs::read(path).map_err(|e| at(path, e))?;
    decode_checkpoint(&bytes, expected).map_err(|e| match e {
        CheckpointError::ConfigMismatch(_) => CliError::Config(format!("{}: {e}", path.display())),
        e => at(path, e),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use augsweep_core::tensor::Tensor;

    fn gray(w: usize, h: usize, seed: u8) -> ImageBuffer {
        ImageBuffer::from_fn(w, h, 1, |x, y, _| (x * 7 + y * 13) as u8 ^ seed).unwrap()
    }

    fn write_raw(path: &Path, w: u32, h: u32, color: png::ColorType, depth: png::BitDepth, data: &[u8]) {
        let f = File::create(path).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(f), w, h);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut wr = enc.write_header().unwrap();
        wr.write_image_data(data).unwrap();
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let g = gray(9, 5, 3);
        write_png(&p, &g).unwrap();
        assert_eq!(read_png(&p).unwrap(), g);
        let rgb = ImageBuffer::from_fn(4, 6, 3, |x, y, c| (x * 40 + y * 3 + c * 80) as u8).unwrap();
        write_png(&p, &rgb).unwrap();
        assert_eq!(read_png(&p).unwrap(), rgb);
    }

    proptest::proptest! {
        #[test]
        fn png_round_trip_is_lossless(w in 1usize..40, h in 1usize..40, rgb in proptest::bool::ANY, seed in 0u8..=255) {
            let c = if rgb { 3 } else { 1 };
            let img = ImageBuffer::from_fn(w, h, c, |x, y, ch| (x * 31 + y * 17 + ch * 59) as u8 ^ seed).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("p.png");
            write_png(&p, &img).unwrap();
            proptest::prop_assert_eq!(read_png(&p).unwrap(), img);
        }
    }

    #[test]
    fn alpha_composites_over_white_and_16_bit_strips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        write_raw(&p, 2, 1, png::ColorType::Rgba, png::BitDepth::Eight, &[0, 0, 0, 0, 10, 20, 30, 255]);
        let img = read_png(&p).unwrap();
        assert_eq!(img.channels(), 3);
        assert_eq!(img.pixels(), &[255, 255, 255, 10, 20, 30]);
        write_raw(&p, 1, 1, png::ColorType::GrayscaleAlpha, png::BitDepth::Eight, &[0, 128]);
        // 255 * 127 / 255 rounds to 127
        assert_eq!(read_png(&p).unwrap().pixels(), &[127]);
        write_raw(&p, 2, 1, png::ColorType::Grayscale, png::BitDepth::Sixteen, &[0xAB, 0xCD, 0x12, 0x34]);
        assert_eq!(read_png(&p).unwrap().pixels(), &[0xAB, 0x12]);
    }

    #[test]
    fn undecodable_file_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        std::fs::write(&p, b"not a png").unwrap();
        let e = read_png(&p).unwrap_err().to_string();
        assert!(e.contains("bad.png"), "{e}");
    }

    fn tree(root: &Path) {
        for (c, class) in ["beta", "alpha"].iter().enumerate() {
            let d = root.join(class);
            std::fs::create_dir(&d).unwrap();
            for i in 0..3 {
                write_png(&d.join(format!("s{i}.png")), &gray(20, 10, (c * 3 + i) as u8)).unwrap();
            }
        }
    }

    #[test]
    fn loads_class_tree_in_order() {
        let dir = tempfile::tempdir().unwrap();
        tree(dir.path());
        std::fs::write(dir.path().join("alpha/.DS_Store"), b"x").unwrap();
        let d = load_image_dir(dir.path(), 16).unwrap();
        assert_eq!(d.len(), 6);
        assert_eq!(d.class_names, vec!["alpha", "beta"]);
        assert_eq!(d.labels(), vec![0, 0, 0, 1, 1, 1]);
        assert!(d.samples.iter().all(|s| s.image.width() == 16 && s.image.height() == 16));
        let again = load_image_dir(dir.path(), 16).unwrap();
        assert_eq!(d, again);
        let first = resize_bilinear(&gray(20, 10, 3), 16, 16).unwrap();
        assert_eq!(d.samples[0].image, first);
    }

    #[test]
    fn one_color_image_promotes_all() {
        let dir = tempfile::tempdir().unwrap();
        tree(dir.path());
        let rgb = ImageBuffer::from_fn(5, 5, 3, |x, _, c| (x * 50 + c) as u8).unwrap();
        write_png(&dir.path().join("beta/s9.png"), &rgb).unwrap();
        let d = load_image_dir(dir.path(), 8).unwrap();
        assert_eq!(d.len(), 7);
        assert!(d.samples.iter().all(|s| s.image.channels() == 3));
    }

    #[test]
    fn load_errors_name_the_culprit() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_image_dir(dir.path(), 16).is_err());
        tree(dir.path());
        std::fs::create_dir(dir.path().join("gamma")).unwrap();
        let e = load_image_dir(dir.path(), 16).unwrap_err().to_string();
        assert!(e.contains("gamma"), "{e}");
        std::fs::write(dir.path().join("gamma/x.jpg"), b"x").unwrap();
        let e = load_image_dir(dir.path(), 16).unwrap_err().to_string();
        assert!(e.contains("x.jpg"), "{e}");
    }

    #[test]
    fn checkpoint_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig {
            input_size: 32,
            stage_channels: [4, 8, 8, 16],
            stage_depths: [1, 1, 2, 2],
            attention_dim: 4,
            attention_heads: 2,
            multiscale_kernel: 3,
            num_classes: 3,
            expand_ratio: 2,
            head_channels: 8,
        };
        let m = Model::seeded(cfg.clone(), 4).unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&m, &p).unwrap();
        let loaded = load_checkpoint(&p, Some(&cfg)).unwrap();
        let q = dir.path().join("m2.ckpt");
        save_checkpoint(&loaded, &q).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
        let x = Tensor::from_fn(&[2, 3, 32, 32], |i| ((i * 37) % 101) as f64 / 100.0);
        let a = m.forward(&x).unwrap();
        let b = loaded.forward(&x).unwrap();
        assert_eq!(a.data(), b.data());
        let mut other = cfg;
        other.num_classes = 4;
        assert!(matches!(load_checkpoint(&p, Some(&other)), Err(CliError::Config(_))));
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        assert!(load_checkpoint(&p, None).is_err());
    }
}
