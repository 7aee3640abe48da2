//! `manifest.json`: what ran, with which configuration, and what it wrote.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub started_unix: f64,
    pub finished_unix: f64,
    /// Where the samples came from (`synthetic`, a directory, or an image).
    pub inputs: Vec<String>,
    /// Paths relative to the output directory.
    pub outputs: Vec<String>,
    /// The effective configuration after flag overrides.
    pub config: String,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

impl RunManifest {
    pub fn start(command: &str, cfg: &RunConfig, inputs: Vec<String>) -> Self {
        Self {
            command: command.to_string(),
            config_digest: cfg.digest(),
            seed: cfg.seed,
            started_unix: unix_now(),
            finished_unix: 0.0,
            inputs,
            outputs: Vec::new(),
            config: cfg.to_toml(),
        }
    }

    pub fn output(&mut self, rel: impl Into<String>) {
        self.outputs.push(rel.into());
    }

    /// Stamp the finish time and write the manifest into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf, CliError> {
        self.finished_unix = unix_now();
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self).map_err(CliError::runtime)?;
        std::fs::write(&path, text + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }
}
