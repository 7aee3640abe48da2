use std::path::Path;
use std::time::Instant;

use augsweep_core::augment::AugmentationPipeline;
use augsweep_core::data::{distort_samples, synth_glyphs, Dataset};
use augsweep_core::gradcam::{find_misclassified, gradcam, overlay};
use augsweep_core::image::ImageBuffer;
use augsweep_core::nn::Model;
use augsweep_core::sweep::{parse_csv_report, render_report, run_sweep, Clock, ReportFormat, SweepSpec};
use augsweep_core::tensor::Tensor;
use augsweep_core::trainer::{evaluate, image_to_input, split_dataset, train_with_observer, SplitIndices};
use serde::Serialize;

use crate::args::{Cli, Command, Common, DataSource, Format};
use crate::config::RunConfig;
use crate::io::{load_checkpoint, load_image_dir, read_png, save_checkpoint, write_png};
use crate::manifest::RunManifest;
use crate::CliError;

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Augment { common, image, out } => cmd_augment(&common, &image, &out),
        Command::Train { common, data, out } => cmd_train(&common, &data, &out),
        Command::Sweep { common, data, out } => cmd_sweep(&common, &data, &out),
        Command::Gradcam {
            common,
            data,
            checkpoint,
            image,
            class,
            misclassified,
            out,
        } => {
            if misclassified {
                cmd_gradcam_misclassified(&common, &data, &checkpoint, &out)
            } else {
                let image = image.ok_or_else(|| CliError::Usage("--image or --misclassified is required".into()))?;
                cmd_gradcam_image(&common, &checkpoint, &image, class, &out)
            }
        }
        Command::Report {
            common: _,
            input,
            format,
            out,
        } => cmd_report(&input, format, out.as_deref()),
    }
}

/// Config file (or defaults) with flag overrides applied, validated.
pub fn resolve_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = &common.techniques {
        cfg.augment.techniques = parse_technique_list(t);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `RA,CJ` style list; blank or `none` means no techniques.
pub fn parse_technique_list(s: &str) -> Vec<String> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("none") {
        return Vec::new();
    }
    s.split(',').map(|t| t.trim().to_string()).collect()
}

fn create_out(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Samples plus the stratified split every data-consuming command shares.
pub struct Prepared {
    pub data: Dataset,
    pub split: SplitIndices,
    pub source: String,
}

/// Load or generate the dataset and split it. Synthetic test images get the
/// configured one-off distortion after the split.
pub fn prepare_data(cfg: &RunConfig, src: &DataSource) -> Result<Prepared, CliError> {
    let (mut data, source) = match (&src.data_dir, src.synthetic) {
        (Some(dir), _) => (load_image_dir(dir, cfg.data.image_size)?, dir.display().to_string()),
        (None, true) => (
            synth_glyphs(&cfg.glyph_spec()).map_err(|e| CliError::Config(e.to_string()))?,
            "synthetic".to_string(),
        ),
        (None, false) => return Err(CliError::Usage("one of --data-dir or --synthetic is required".into())),
    };
    let split = split_dataset(&data.labels(), cfg.seed).map_err(CliError::runtime)?;
    if src.data_dir.is_none() {
        if let Some(d) = cfg.distortion() {
            distort_samples(&mut data, &split.test, &d, cfg.seed);
        }
    }
    Ok(Prepared { data, split, source })
}

fn pipeline(cfg: &RunConfig) -> Result<AugmentationPipeline, CliError> {
    let ops = cfg.ops()?;
    if ops.is_empty() {
        return Ok(AugmentationPipeline::empty(cfg.seed));
    }
    AugmentationPipeline::new(ops, cfg.seed).map_err(|e| CliError::Config(e.to_string()))
}

fn cmd_augment(common: &Common, image: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = resolve_config(common)?;
    let full = pipeline(&cfg)?;
    let img = read_png(image)?;
    create_out(out)?;
    let mut manifest = RunManifest::start("augment", &cfg, vec![image.display().to_string()]);
    for op in full.ops() {
        let single = AugmentationPipeline::new(vec![*op], cfg.seed).map_err(|e| CliError::Config(e.to_string()))?;
        let name = format!("{}.png", op.technique().abbreviation());
        write_png(&out.join(&name), &single.apply_for_sample(&img, 0, 0).map_err(CliError::runtime)?)?;
        manifest.output(name);
    }
    let composed = full.apply_for_sample(&img, 0, 0).map_err(CliError::runtime)?;
    write_png(&out.join("composed.png"), &composed)?;
    manifest.output("composed.png");
    manifest.finish(out)?;
    Ok(())
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
    test_samples: usize,
    class_names: &'a [String],
    /// `confusion[actual][predicted]`.
    confusion: &'a [Vec<u64>],
    absent_classes: &'a [usize],
    best_epoch: usize,
    stopped_epoch: usize,
}

fn cmd_train(common: &Common, src: &DataSource, out: &Path) -> Result<(), CliError> {
    let cfg = resolve_config(common)?;
    let pipe = pipeline(&cfg)?;
    let p = prepare_data(&cfg, src)?;
    let model = Model::seeded(cfg.model_config(p.data.num_classes()), cfg.seed).map_err(|e| CliError::Config(e.to_string()))?;
    create_out(out)?;
    let mut manifest = RunManifest::start("train", &cfg, vec![p.source.clone()]);
    eprintln!(
        "training on {} samples ({} train / {} val / {} test), {} parameters, augmentation {}",
        p.data.len(),
        p.split.train.len(),
        p.split.val.len(),
        p.split.test.len(),
        model.count_params(),
        pipe.label()
    );
    let (best, history) = train_with_observer(&model, &p.data, &p.split, &pipe, &cfg.train_config(), &mut |r| {
        eprintln!(
            "epoch {:>3}  train {:.4}  val {:.4}  val acc {:.2}%",
            r.epoch,
            r.train_loss,
            r.val_loss,
            100.0 * r.val_accuracy
        )
    })
    .map_err(CliError::runtime)?;
    let m = evaluate(&best, &p.split.test, &p.data).map_err(CliError::runtime)?;
    if !m.absent_classes.is_empty() {
        eprintln!("warning: classes {:?} never occur in the test split", m.absent_classes);
    }
    save_checkpoint(&best, &out.join("model.ckpt"))?;
    manifest.output("model.ckpt");
    write_text(&out.join("history.csv"), &history.to_csv())?;
    manifest.output("history.csv");
    let file = MetricsFile {
        accuracy: m.accuracy,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        test_samples: p.split.test.len(),
        class_names: &p.data.class_names,
        confusion: &m.confusion,
        absent_classes: &m.absent_classes,
        best_epoch: history.best_epoch,
        stopped_epoch: history.stopped_epoch,
    };
    let json = serde_json::to_string_pretty(&file).map_err(CliError::runtime)?;
    write_text(&out.join("metrics.json"), &(json + "\n"))?;
    manifest.output("metrics.json");
    manifest.finish(out)?;
    eprintln!("test accuracy {:.2}%", 100.0 * m.accuracy);
    Ok(())
}

/// Seconds since construction.
pub struct WallClock(Instant);

impl Default for WallClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// File-name form of a row label: `RA + CJ` becomes `RA_CJ`.
pub fn label_slug(label: &str) -> String {
    label.replace(" + ", "_").replace(' ', "_")
}

fn cmd_sweep(common: &Common, src: &DataSource, out: &Path) -> Result<(), CliError> {
    let cfg = resolve_config(common)?;
    let ops = cfg.ops()?;
    if ops.is_empty() {
        return Err(CliError::Config("a sweep needs at least one technique".into()));
    }
    let p = prepare_data(&cfg, src)?;
    let spec = SweepSpec {
        model: cfg.model_config(p.data.num_classes()),
        train: cfg.train_config(),
        init_seed: cfg.seed,
    };
    create_out(out)?;
    let hist_dir = out.join("histories");
    create_out(&hist_dir)?;
    let mut manifest = RunManifest::start("sweep", &cfg, vec![p.source.clone()]);
    let rows = 1usize << ops.len();
    let mut written = Vec::new();
    let mut io_err = None;
    let report = run_sweep(&p.data, &p.split, &spec, &ops, &WallClock::default(), &mut |i, row, hist| {
        match &row.result {
            Ok(m) => eprintln!(
                "[{}/{}] {:<16} acc {:.2}%  stopped {}  {:.1}s",
                i + 1,
                rows,
                row.label,
                100.0 * m.accuracy,
                m.stopped_epoch,
                row.wall_seconds
            ),
            Err(e) => eprintln!("[{}/{}] {:<16} failed: {e}", i + 1, rows, row.label),
        }
        if let Some(h) = hist {
            let rel = format!("histories/{}.csv", label_slug(&row.label));
            match write_text(&out.join(&rel), &h.to_csv()) {
                Ok(()) => written.push(rel),
                Err(e) => io_err = Some(e),
            }
        }
    })
    .map_err(CliError::runtime)?;
    if let Some(e) = io_err {
        return Err(e);
    }
    for (name, format) in [("report.md", ReportFormat::Markdown), ("report.csv", ReportFormat::Csv)] {
        write_text(&out.join(name), &render_report(&report, format).map_err(CliError::runtime)?)?;
        manifest.output(name);
    }
    for rel in written {
        manifest.output(rel);
    }
    manifest.finish(out)?;
    match &report.best_label {
        Some(b) => {
            eprintln!("best: {b}");
            Ok(())
        }
        None => Err(CliError::Runtime("every sweep row failed".into())),
    }
}

fn predicted_class(model: &Model, img: &ImageBuffer) -> Result<usize, CliError> {
    let x = image_to_input(img, model.config().input_size).map_err(CliError::runtime)?;
    let logits = model
        .forward(&Tensor::stack(&[x]).map_err(CliError::runtime)?)
        .map_err(CliError::runtime)?;
    let row = logits.data();
    Ok((0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b }))
}

fn cmd_gradcam_image(
    common: &Common,
    checkpoint: &Path,
    image: &Path,
    class: Option<usize>,
    out: &Path,
) -> Result<(), CliError> {
    let cfg = resolve_config(common)?;
    let model = load_checkpoint(checkpoint, None)?;
    let img = read_png(image)?;
    let predicted = predicted_class(&model, &img)?;
    let target = class.unwrap_or(predicted);
    let map = gradcam(&model, &img, target).map_err(|e| CliError::Config(e.to_string()))?;
    create_out(out)?;
    let mut manifest = RunManifest::start(
        "gradcam",
        &cfg,
        vec![checkpoint.display().to_string(), image.display().to_string()],
    );
    let stem = image.file_stem().unwrap_or_default().to_string_lossy();
    let name = format!("{stem}_class{target}.png");
    write_png(&out.join(&name), &overlay(&map, &img))?;
    manifest.output(name);
    manifest.finish(out)?;
    eprintln!("predicted class {predicted}, map for class {target}");
    Ok(())
}

pub const NONE_NOTE: &str = "none.txt";

fn cmd_gradcam_misclassified(common: &Common, src: &DataSource, checkpoint: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = resolve_config(common)?;
    let p = prepare_data(&cfg, src)?;
    // without a config file only the class count can be checked
    let expected = common.config.as_ref().map(|_| cfg.model_config(p.data.num_classes()));
    let model = load_checkpoint(checkpoint, expected.as_ref())?;
    if model.config().num_classes != p.data.num_classes() {
        return Err(CliError::Config(format!(
            "checkpoint predicts {} classes but the data has {}",
            model.config().num_classes,
            p.data.num_classes()
        )));
    }
    create_out(out)?;
    let mut manifest = RunManifest::start(
        "gradcam",
        &cfg,
        vec![checkpoint.display().to_string(), p.source.clone()],
    );
    let wrong = find_misclassified(&model, &p.data, &p.split.test).map_err(CliError::runtime)?;
    let names = &p.data.class_names;
    for w in &wrong {
        let img = &p.data.samples[w.index].image;
        let map = gradcam(&model, img, w.predicted).map_err(CliError::runtime)?;
        let name = format!("{}_{}_{}.png", w.index, names[w.predicted], names[w.actual]);
        write_png(&out.join(&name), &overlay(&map, img))?;
        manifest.output(name);
    }
    if wrong.is_empty() {
        write_text(
            &out.join(NONE_NOTE),
            &format!("none: all {} test samples are classified correctly\n", p.split.test.len()),
        )?;
        manifest.output(NONE_NOTE);
        eprintln!("none misclassified");
    } else {
        eprintln!("{} of {} test samples misclassified", wrong.len(), p.split.test.len());
    }
    manifest.finish(out)?;
    Ok(())
}

fn cmd_report(input: &Path, format: Format, out: Option<&Path>) -> Result<(), CliError> {
    let text = std::fs::read_to_string(input).map_err(|e| CliError::Runtime(format!("{}: {e}", input.display())))?;
    let report = parse_csv_report(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", input.display())))?;
    let (fmt, name) = match format {
        Format::Md => (ReportFormat::Markdown, "report.md"),
        Format::Csv => (ReportFormat::Csv, "report.csv"),
    };
    let rendered = render_report(&report, fmt).map_err(CliError::runtime)?;
    match out {
        None => print!("{rendered}"),
        Some(dir) => {
            create_out(dir)?;
            write_text(&dir.join(name), &rendered)?;
            let cfg = RunConfig {
                seed: report.metadata.seed,
                ..RunConfig::default()
            };
            let mut manifest = RunManifest::start("report", &cfg, vec![input.display().to_string()]);
            manifest.config_digest = report.metadata.config_digest.clone();
            manifest.output(name);
            manifest.finish(dir)?;
        }
    }
    Ok(())
}
