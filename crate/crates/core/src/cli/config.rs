use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::ModelConfig;
use crate::ingest::ActivityCriteria;
use crate::metrics::MetricSelector;

/// Settings read from a TOML file. Command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub classify: ClassifySection,
    pub gate: GateSection,
    pub ingest: IngestSection,
    pub serve: ServeSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifySection {
    pub parallelism: usize,
    /// Defaults to `.verdict-cache` beside the dataset.
    pub cache_dir: Option<PathBuf>,
    pub spec: Option<PathBuf>,
}

impl Default for ClassifySection {
    fn default() -> Self {
        ClassifySection {
            parallelism: 4,
            cache_dir: None,
            spec: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateSection {
    pub metric: MetricSelector,
    pub threshold: f64,
}

impl Default for GateSection {
    fn default() -> Self {
        GateSection {
            metric: MetricSelector::default(),
            threshold: 0.80,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub base_url: String,
    pub criteria: ActivityCriteria,
    pub parallelism: usize,
}

impl Default for IngestSection {
    fn default() -> Self {
        IngestSection {
            base_url: crate::ingest::GITHUB_API.into(),
            criteria: ActivityCriteria::default(),
            parallelism: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeSection {
    pub listen: String,
    pub annotators: Vec<String>,
    pub reviewer: Option<String>,
    pub adjudicate: bool,
}

impl Default for ServeSection {
    fn default() -> Self {
        ServeSection {
            listen: "127.0.0.1:8080".into(),
            annotators: Vec::new(),
            reviewer: None,
            adjudicate: false,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("reading config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| anyhow::anyhow!("config {}: {e}", path.display()))
    }
}
