//! The record every command leaves next to its outputs.

use std::collections::BTreeMap;
use std::path::Path;

use facerep_core::metrics::MetricReport;
use facerep_core::params::file_hash;
use facerep_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

impl Artifact {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self { path: path.to_string_lossy().into_owned(), sha256: file_hash(path)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub seed: u64,
    pub deterministic: bool,
    /// Pre-training objective of the model involved, e.g. `ITC+MIM1+ALIGN`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub config: RunConfig,
    #[serde(default)]
    pub artifacts: BTreeMap<String, Artifact>,
    /// SHA-256 of the checkpoint file written by this run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_hash: Option<String>,
    /// Content hash of the image backbone parameters after the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backbone_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backbone_hash_before: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricReport>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub summary: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    /// Omitted under the determinism flag so reports compare byte for byte.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_secs: Option<f64>,
}

impl RunReport {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            seed: cfg.seed,
            deterministic: cfg.deterministic,
            variant: None,
            config: cfg.clone(),
            artifacts: BTreeMap::new(),
            checkpoint_hash: None,
            backbone_hash: None,
            backbone_hash_before: None,
            metrics: None,
            summary: BTreeMap::new(),
            notes: Vec::new(),
            wall_clock_secs: None,
        }
    }

    pub fn add_artifact(&mut self, name: &str, path: &Path) -> Result<()> {
        self.artifacts.insert(name.to_string(), Artifact::of(path)?);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
