use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::data::DatasetMeta;
use crate::error::{Error, Result};
use crate::tensor::RNG_ALGORITHM;

use super::config::ExperimentConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything needed to rerun a command: configuration, seeds, inputs and outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub rng: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub datasets: Vec<DatasetMeta>,
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<PathBuf>,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
}

/// Collects artifact names while a command runs, then writes the manifest.
#[derive(Debug)]
pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: &ExperimentConfig, seeds: Vec<u64>) -> Self {
        let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Self {
            manifest: RunManifest {
                tool: "nclab".into(),
                version: crate::VERSION.into(),
                command: command.into(),
                rng: RNG_ALGORITHM.into(),
                config: config.clone(),
                seeds,
                datasets: Vec::new(),
                inputs: Vec::new(),
                artifacts: Vec::new(),
                started_unix,
                wall_clock_secs: 0.0,
            },
            started: Instant::now(),
        }
    }

    pub fn dataset(&mut self, meta: &DatasetMeta) -> &mut Self {
        self.manifest.datasets.push(meta.clone());
        self
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.manifest.inputs.push(path.to_path_buf());
        self
    }

    pub fn artifact(&mut self, name: impl Into<PathBuf>) -> &mut Self {
        self.manifest.artifacts.push(name.into());
        self
    }

    /// Writes `manifest.json` into `dir` and returns the manifest.
    pub fn finish(mut self, dir: &Path) -> Result<RunManifest> {
        self.manifest.wall_clock_secs = self.started.elapsed().as_secs_f64();
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(self.manifest)
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Adds input files to the manifest already written in `dir`.
pub fn record_inputs(dir: &Path, inputs: &[PathBuf]) -> Result<RunManifest> {
    let mut m = read_manifest(dir)?;
    for p in inputs {
        if !m.inputs.contains(p) {
            m.inputs.push(p.clone());
        }
    }
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&m)?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(m)
}
