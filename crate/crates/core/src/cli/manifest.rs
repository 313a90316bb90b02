use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{manifest_path, DatasetManifest};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRef {
    pub path: String,
    pub sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_id: Option<String>,
}

impl InputRef {
    pub fn of(path: &Path) -> anyhow::Result<Self> {
        let bytes = fs::read(path).map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
        let dataset_id = DatasetManifest::load(manifest_path(path)).ok().map(|m| m.dataset_id);
        Ok(InputRef {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
            dataset_id,
        })
    }
}

/// What a command read, how it was configured and what it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub timestamp: DateTime<Utc>,
    pub inputs: Vec<InputRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec_version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
    /// Set when some outputs are incomplete.
    #[serde(default)]
    pub partial: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, args: &[String]) -> Self {
        RunManifest {
            command: command.into(),
            args: args.to_vec(),
            timestamp: Utc::now(),
            inputs: Vec::new(),
            spec_version: None,
            model: None,
            seed: None,
            outputs: Vec::new(),
            partial: false,
            notes: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        self.inputs.push(InputRef::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// `<primary output>.run.json`
    pub fn path_for(primary: &Path) -> PathBuf {
        let mut name = primary.file_name().unwrap_or_default().to_os_string();
        name.push(".run.json");
        primary.with_file_name(name)
    }

    pub fn save(&self, primary: &Path) -> anyhow::Result<PathBuf> {
        let path = Self::path_for(primary);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .map_err(|e| anyhow::anyhow!("writing {}: {e}", path.display()))?;
        Ok(path)
    }
}
