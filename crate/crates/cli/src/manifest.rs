//! Per-run manifest, rewritten atomically as the run progresses.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_COPY: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub iteration: usize,
    /// File holding the row, relative to the run directory.
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub outputs: Vec<String>,
    pub metrics: Vec<MetricEntry>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// A run directory with its manifest.
#[derive(Debug)]
pub struct Run {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl Run {
    /// Creates `dir`, stores the resolved configuration and writes the
    /// opening manifest.
    pub fn start(dir: &Path, command: &str, cfg: &RunConfig) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
        write_atomic(&dir.join(CONFIG_COPY), cfg.to_toml().as_bytes())?;
        let run = Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                command: command.to_string(),
                config_hash: cfg.hash(),
                seed: cfg.seed,
                version: env!("CARGO_PKG_VERSION").to_string(),
                started_unix: now(),
                finished_unix: None,
                outputs: Vec::new(),
                metrics: Vec::new(),
            },
        };
        run.flush()?;
        Ok(run)
    }

    pub fn flush(&self) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        write_atomic(&self.dir.join(MANIFEST), text.as_bytes())
    }

    /// Writes an output file relative to the run directory.
    pub fn output(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", parent.display())))?;
        }
        write_atomic(&path, bytes)?;
        if !self.manifest.outputs.iter().any(|o| o == name) {
            self.manifest.outputs.push(name.to_string());
        }
        Ok(path)
    }

    pub fn metric(&mut self, iteration: usize, file: &str) {
        self.manifest.metrics.push(MetricEntry {
            iteration,
            file: file.to_string(),
        });
    }

    pub fn finish(mut self) -> Result<RunManifest, CliError> {
        self.manifest.finished_unix = Some(now());
        self.flush()?;
        Ok(self.manifest)
    }
}
