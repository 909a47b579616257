//! TOML configuration. Every key is optional; see the README for the full
//! key set and defaults.

use std::path::{Path, PathBuf};

use instqc_core::dataset::SplitRatios;
use instqc_core::model::TrainingConfig;
use instqc_core::pipeline::{PreprocessConfig, DEFAULT_THRESHOLD};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub pipeline: PipelineSection,
    pub preprocess: PreprocessConfig,
    pub service: ServiceSection,
    pub augment: AugmentSection,
    pub training: TrainingConfig,
    pub split: SplitSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub confidence_threshold: f64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        Self {
            confidence_threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub bind: String,
    pub port: u16,
    pub store_dir: PathBuf,
    pub model_dir: PathBuf,
    /// Static review UI; nothing is served outside `/api` when unset.
    pub ui_dir: Option<PathBuf>,
    /// Manifest receiving reviewer decisions; `<store_dir>/review_manifest.jsonl` when unset.
    pub feedback_manifest: Option<PathBuf>,
    /// Scans allowed to run at once.
    pub scan_workers: usize,
    pub max_upload_bytes: usize,
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            store_dir: "store".into(),
            model_dir: "models".into(),
            ui_dir: None,
            feedback_manifest: None,
            scan_workers: 2,
            max_upload_bytes: 64 << 20,
        }
    }
}

impl ServiceSection {
    pub fn feedback_manifest(&self) -> PathBuf {
        self.feedback_manifest
            .clone()
            .unwrap_or_else(|| self.store_dir.join("review_manifest.jsonl"))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    /// JSON recipe file; the built-in twelve-transform recipe when unset.
    pub recipe: Option<PathBuf>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    /// Seed for splitting manifests that carry no split assignments.
    pub seed: u64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

impl Config {
    /// The baseline defaults differ from [`TrainingConfig::default`] only in
    /// the learning rate.
    pub fn baseline() -> Self {
        Self {
            training: TrainingConfig::baseline(),
            ..Self::default()
        }
    }

    /// Reads `path`, or returns [`Config::baseline`] when `path` is `None`.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::baseline());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| anyhow::anyhow!("config {}: {e}", path.display()))
    }

    /// Unset keys of the `[training]` table keep their baseline values.
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut value: toml::Table = toml::from_str(text)?;
        let training = value.remove("training");
        let mut config: Config = value.try_into()?;
        config.training = match training {
            None => TrainingConfig::baseline(),
            Some(t) => {
                let mut merged = toml::Table::try_from(TrainingConfig::baseline())?;
                let toml::Value::Table(t) = t else {
                    anyhow::bail!("[training] must be a table");
                };
                merged.extend(t);
                merged.try_into()?
            }
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let t = self.pipeline.confidence_threshold;
        anyhow::ensure!(t > 0.0 && t < 1.0, "confidence_threshold {t} outside (0, 1)");
        anyhow::ensure!(self.service.scan_workers > 0, "scan_workers must be positive");
        anyhow::ensure!(self.preprocess.target_size > 0, "target_size must be positive");
        self.training.validate()?;
        Ok(())
    }

    pub fn split_ratios(&self) -> SplitRatios {
        SplitRatios {
            train: self.split.train,
            val: self.split.val,
            test: self.split.test,
        }
    }
}
