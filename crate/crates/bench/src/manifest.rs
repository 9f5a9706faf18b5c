use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Diverged,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestTotals {
    /// Whole-run training wall time: pre-training plus optimizer steps.
    pub wall_s: f64,
    pub wall_s_per_epoch: f64,
    pub forward_iterations: u64,
    pub vjps: u64,
    pub steps: u64,
    pub diverged_samples: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub started_at: String,
    pub status: RunStatus,
    pub config: RunConfig,
    /// Output name to path.
    pub outputs: BTreeMap<String, PathBuf>,
    pub totals: ManifestTotals,
    pub final_metrics: Option<FinalMetrics>,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            started_at: chrono::Utc::now().to_rfc3339(),
            status: RunStatus::Completed,
            config: config.clone(),
            outputs: BTreeMap::new(),
            totals: ManifestTotals::default(),
            final_metrics: None,
        }
    }

    /// Writes `contents` to `dir/name` and records it under `key`.
    pub fn emit(
        &mut self,
        dir: &Path,
        key: &str,
        name: &str,
        contents: &str,
    ) -> Result<PathBuf, CliError> {
        let path = dir.join(name);
        write_file(&path, contents)?;
        self.outputs.insert(key.to_string(), path.clone());
        Ok(path)
    }

    /// Writes the manifest itself as `dir/manifest.json`.
    pub fn write(&mut self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(MANIFEST_FILE);
        self.outputs.insert("manifest".into(), path.clone());
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::io(&path, e))?;
        write_file(&path, &(text + "\n"))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("manifest {}: {e}", path.display())))
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}
