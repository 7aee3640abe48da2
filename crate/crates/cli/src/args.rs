use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "augsweep", version, about = "Augmentation ablation sweeps for handwritten character classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags every command accepts. Anything set here beats the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Comma-separated technique abbreviations (RR, RA, C, CJ); empty or
    /// `none` disables augmentation.
    #[arg(long, global = true)]
    pub techniques: Option<String>,
}

/// Where the samples come from.
#[derive(Debug, Clone, Default, Args)]
pub struct DataSource {
    /// Directory of `<class>/*.png` trees.
    #[arg(long, conflicts_with = "synthetic")]
    pub data_dir: Option<PathBuf>,
    /// Use the generated glyph corpus.
    #[arg(long)]
    pub synthetic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write one preview PNG per enabled technique plus the composed result.
    Augment {
        #[command(flatten)]
        common: Common,
        /// Input PNG.
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model and score it on the test split.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataSource,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every subset of the enabled techniques and tabulate the results.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataSource,
        #[arg(long)]
        out: PathBuf,
    },
    /// Class activation overlays for one image or for every misclassified
    /// test sample.
    Gradcam {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataSource,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, required_unless_present = "misclassified")]
        image: Option<PathBuf>,
        /// Target class; defaults to the predicted one.
        #[arg(long)]
        class: Option<usize>,
        #[arg(long, conflicts_with = "image")]
        misclassified: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-render a sweep's report.csv.
    Report {
        #[command(flatten)]
        common: Common,
        /// A report.csv written by `sweep`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Md)]
        format: Format,
        /// Output directory; prints to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Md,
    Csv,
}
