//! The augmentation-combination grid and its result tables.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cell::Cell;
use core::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::augment::{enumerate_combinations, AugOp, AugmentError};
use crate::data::Dataset;
use crate::nn::{Model, ModelConfig, NnError};
use crate::trainer::{evaluate, train_with_observer, SplitIndices, TrainConfig, TrainError, TrainHistory};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SweepError {
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("report has no rows")]
    EmptyReport,
    #[error("rows disagree on split or initialization ({0})")]
    DigestMismatch(String),
    #[error("malformed report line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Monotonic seconds source for row timings.
pub trait Clock {
    fn now(&self) -> f64;
}

/// A clock that never advances; every timing reads 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrozenClock;

impl Clock for FrozenClock {
    fn now(&self) -> f64 {
        0.0
    }
}

/// Advances by a fixed step on every reading.
#[derive(Debug, Default)]
pub struct StepClock {
    t: Cell<f64>,
    step: f64,
}

impl StepClock {
    pub fn new(step: f64) -> Self {
        Self { t: Cell::new(0.0), step }
    }
}

impl Clock for StepClock {
    fn now(&self) -> f64 {
        let t = self.t.get();
        self.t.set(t + self.step);
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub stopped_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub label: String,
    pub technique_count: usize,
    /// `Err` holds the failure message of a row that did not finish.
    pub result: Result<RowMetrics, String>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepMetadata {
    pub dataset: String,
    pub seed: u64,
    /// Hex SHA-256 over the model config, training config, initial
    /// parameters and split shared by every row.
    pub config_digest: String,
    pub param_count: usize,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub best_label: Option<String>,
    pub metadata: SweepMetadata,
}

/// Everything a sweep holds fixed across rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Seed of the shared initial weights.
    pub init_seed: u64,
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Digest of what every row must share.
pub fn setup_digest(model: &Model, train: &TrainConfig, split: &SplitIndices) -> String {
    let mut h = Sha256::new();
    h.update(model.config().to_text().as_bytes());
    h.update(
        format!(
            "{} {} {} {} {}\n",
            train.max_epochs, train.learning_rate, train.batch_size, train.patience, train.seed
        )
        .as_bytes(),
    );
    for e in model.params().entries() {
        h.update(e.name.as_bytes());
        for v in e.value.data() {
            h.update(v.to_le_bytes());
        }
    }
    for part in [&split.train, &split.val, &split.test] {
        h.update((part.len() as u64).to_le_bytes());
        for &i in part.iter() {
            h.update((i as u64).to_le_bytes());
        }
    }
    hex(&h.finalize())
}

/// Argmax of accuracy over finished rows; ties go to fewer techniques, then
/// to the lexicographically smaller label.
pub fn best_label(rows: &[SweepRow]) -> Option<String> {
    rows.iter()
        .filter_map(|r| r.result.as_ref().ok().map(|m| (r, m.accuracy)))
        .min_by(|(a, aa), (b, ba)| {
            ba.total_cmp(aa)
                .then(a.technique_count.cmp(&b.technique_count))
                .then_with(|| a.label.cmp(&b.label))
        })
        .map(|(r, _)| r.label.clone())
}

/// Train one fresh, identically initialized model per technique subset on
/// `split` and score it on the test indices.
///
/// A failing row is recorded with its message and the sweep moves on.
/// `on_row` sees each row and, when it finished, its history.
pub fn run_sweep(
    data: &Dataset,
    split: &SplitIndices,
    spec: &SweepSpec,
    techniques: &[AugOp],
    clock: &dyn Clock,
    on_row: &mut dyn FnMut(usize, &SweepRow, Option<&TrainHistory>),
) -> Result<SweepReport, SweepError> {
    spec.train.validate()?;
    let pipelines = enumerate_combinations(techniques, spec.train.seed)?;
    let start = clock.now();
    let mut digest: Option<String> = None;
    let mut param_count = 0;
    let mut rows = Vec::with_capacity(pipelines.len());
    for (ri, pipe) in pipelines.iter().enumerate() {
        let model = Model::seeded(spec.model.clone(), spec.init_seed)?;
        let d = setup_digest(&model, &spec.train, split);
        match &digest {
            Some(prev) if *prev != d => return Err(SweepError::DigestMismatch(pipe.label().to_string())),
            Some(_) => {}
            None => digest = Some(d),
        }
        param_count = model.count_params();
        let t0 = clock.now();
        let outcome = train_with_observer(&model, data, split, pipe, &spec.train, &mut |_| {}).and_then(|(best, h)| {
            let m = evaluate(&best, &split.test, data)?;
            Ok((m, h))
        });
        let wall_seconds = clock.now() - t0;
        let (result, history) = match outcome {
            Ok((m, h)) => (
                Ok(RowMetrics {
                    precision: m.precision,
                    recall: m.recall,
                    f1: m.f1,
                    accuracy: m.accuracy,
                    stopped_epoch: h.stopped_epoch,
                }),
                Some(h),
            ),
            Err(e) => (Err(e.to_string()), None),
        };
        let row = SweepRow {
            label: pipe.label().to_string(),
            technique_count: pipe.ops().len(),
            result,
            wall_seconds,
        };
        on_row(ri, &row, history.as_ref());
        rows.push(row);
    }
    let total_seconds = clock.now() - start;
    Ok(SweepReport {
        best_label: best_label(&rows),
        rows,
        metadata: SweepMetadata {
            dataset: data.name.clone(),
            seed: spec.train.seed,
            config_digest: digest.unwrap_or_default(),
            param_count,
            total_seconds,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

pub const CSV_COLUMNS: &str = "label,precision,recall,f1,accuracy,stopped_epoch,wall_seconds";

/// Accuracy as a percentage with two decimals, e.g. `97.57%`.
pub fn percent2(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn percent0(x: f64) -> String {
    format!("{:.0}%", 100.0 * x)
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

pub fn render_report(r: &SweepReport, format: ReportFormat) -> Result<String, SweepError> {
    if r.rows.is_empty() {
        return Err(SweepError::EmptyReport);
    }
    Ok(match format {
        ReportFormat::Markdown => render_markdown(r),
        ReportFormat::Csv => render_csv(r),
    })
}

fn render_markdown(r: &SweepReport) -> String {
    let m = &r.metadata;
    let mut s = String::new();
    let _ = writeln!(s, "# Augmentation sweep on {}", m.dataset);
    s.push('\n');
    let _ = writeln!(s, "- seed: {}", m.seed);
    let _ = writeln!(s, "- config digest: `{}`", m.config_digest);
    let _ = writeln!(s, "- trainable parameters: {}", m.param_count);
    let _ = writeln!(s, "- best: {}", r.best_label.as_deref().unwrap_or("none"));
    s.push('\n');
    s.push_str("| augmentation | precision | recall | f1-score | accuracy | stopped epoch | seconds |\n");
    s.push_str("|---|---|---|---|---|---|---|\n");
    for row in &r.rows {
        match &row.result {
            Ok(x) => {
                let acc = percent2(x.accuracy);
                let acc = if r.best_label.as_deref() == Some(row.label.as_str()) {
                    format!("**{acc}**")
                } else {
                    acc
                };
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {} | {} | {:.1} |",
                    row.label,
                    percent0(x.precision),
                    percent0(x.recall),
                    percent0(x.f1),
                    acc,
                    x.stopped_epoch,
                    row.wall_seconds
                );
            }
            Err(_) => {
                let _ = writeln!(
                    s,
                    "| {} | ERROR | ERROR | ERROR | ERROR | ERROR | {:.1} |",
                    row.label, row.wall_seconds
                );
            }
        }
    }
    let failed: Vec<&SweepRow> = r.rows.iter().filter(|x| x.result.is_err()).collect();
    if !failed.is_empty() {
        s.push('\n');
        for row in failed {
            if let Err(e) = &row.result {
                let _ = writeln!(s, "- {} failed: {}", row.label, one_line(e));
            }
        }
    }
    s
}

/// Metadata rides along as `#` comment lines so the file parses back into
/// an equal report. Metric columns hold full-precision fractions.
fn render_csv(r: &SweepReport) -> String {
    let m = &r.metadata;
    let mut s = String::new();
    let _ = writeln!(s, "# dataset={}", one_line(&m.dataset));
    let _ = writeln!(s, "# seed={}", m.seed);
    let _ = writeln!(s, "# config_digest={}", m.config_digest);
    let _ = writeln!(s, "# param_count={}", m.param_count);
    let _ = writeln!(s, "# total_seconds={}", m.total_seconds);
    if let Some(b) = &r.best_label {
        let _ = writeln!(s, "# best={b}");
    }
    for row in &r.rows {
        let _ = writeln!(s, "# techniques {}={}", row.label, row.technique_count);
        if let Err(e) = &row.result {
            let _ = writeln!(s, "# error {}={}", row.label, one_line(e));
        }
    }
    s.push_str(CSV_COLUMNS);
    s.push('\n');
    for row in &r.rows {
        match &row.result {
            Ok(x) => {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    row.label, x.precision, x.recall, x.f1, x.accuracy, x.stopped_epoch, row.wall_seconds
                );
            }
            Err(_) => {
                let _ = writeln!(s, "{},ERROR,ERROR,ERROR,ERROR,ERROR,{}", row.label, row.wall_seconds);
            }
        }
    }
    s
}

/// Inverse of the CSV rendering.
pub fn parse_csv_report(text: &str) -> Result<SweepReport, SweepError> {
    let err = |line: usize, reason: &str| SweepError::Parse {
        line: line + 1,
        reason: reason.to_string(),
    };
    let mut report = SweepReport::default();
    let mut counts: Vec<(String, usize)> = Vec::new();
    let mut errors: Vec<(String, String)> = Vec::new();
    let mut header_seen = false;
    for (ln, line) in text.lines().enumerate() {
        if let Some(c) = line.strip_prefix("# ") {
            if let Some(rest) = c.strip_prefix("techniques ") {
                let (label, n) = rest.rsplit_once('=').ok_or_else(|| err(ln, "expected label=count"))?;
                let n = n.parse().map_err(|_| err(ln, "bad technique count"))?;
                counts.push((label.to_string(), n));
                continue;
            }
            if let Some(rest) = c.strip_prefix("error ") {
                let (label, msg) = rest.split_once('=').ok_or_else(|| err(ln, "expected label=message"))?;
                errors.push((label.to_string(), msg.to_string()));
                continue;
            }
            let (k, v) = c.split_once('=').ok_or_else(|| err(ln, "expected key=value"))?;
            let m = &mut report.metadata;
            match k {
                "dataset" => m.dataset = v.to_string(),
                "seed" => m.seed = v.parse().map_err(|_| err(ln, "bad seed"))?,
                "config_digest" => m.config_digest = v.to_string(),
                "param_count" => m.param_count = v.parse().map_err(|_| err(ln, "bad param_count"))?,
                "total_seconds" => m.total_seconds = v.parse().map_err(|_| err(ln, "bad total_seconds"))?,
                "best" => report.best_label = Some(v.to_string()),
                _ => return Err(err(ln, "unknown metadata key")),
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        if !header_seen {
            if line != CSV_COLUMNS {
                return Err(err(ln, "missing column header"));
            }
            header_seen = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(err(ln, "expected 7 fields"));
        }
        let label = f[0].to_string();
        let wall_seconds = f[6].parse().map_err(|_| err(ln, "bad wall_seconds"))?;
        let result = if f[1] == "ERROR" {
            let msg = errors.iter().find(|(l, _)| *l == label).map(|(_, m)| m.clone()).unwrap_or_default();
            Err(msg)
        } else {
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| err(ln, "bad metric"));
            Ok(RowMetrics {
                precision: num(1)?,
                recall: num(2)?,
                f1: num(3)?,
                accuracy: num(4)?,
                stopped_epoch: f[5].parse().map_err(|_| err(ln, "bad stopped_epoch"))?,
            })
        };
        let technique_count = counts
            .iter()
            .find(|(l, _)| *l == label)
            .map(|(_, n)| *n)
            .unwrap_or_else(|| if label == "None" { 0 } else { label.split(" + ").count() });
        report.rows.push(SweepRow {
            label,
            technique_count,
            result,
            wall_seconds,
        });
    }
    if !header_seen {
        return Err(err(0, "missing column header"));
    }
    Ok(report)
}
