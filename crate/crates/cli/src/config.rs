//! Run configuration: a TOML file with one section per module, layered over
//! a scale preset. Keys absent from the file keep the preset value; unknown
//! keys are rejected.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use forge_cl::data::{PermutedBenchConfig, PressGenConfig};
use forge_cl::engine::ModelConfig;
use forge_cl::experiments::TrainSpec;
use forge_cl::strategies::{StrategyHyper, StrategyKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    /// Full-size network and windows.
    Paper,
    /// Reduced dimensions that run in minutes on a laptop.
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Press,
    Permuted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    /// Press catalog size.
    pub n_products: usize,
    pub seed: u64,
    pub seq_len: usize,
    pub n_sequences: usize,
    pub strategies: Vec<StrategyKind>,
    /// Catalog positions trained by `run`; drawn from `seed` when absent.
    pub sequence: Option<Vec<usize>>,
    /// Load datasets written by `gen-data` instead of generating them.
    pub data_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Press,
            n_products: 15,
            seed: 0,
            seq_len: 5,
            n_sequences: 20,
            strategies: StrategyKind::ALL.to_vec(),
            sequence: None,
            data_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scale: Scale,
    pub experiment: ExperimentConfig,
    pub model: ModelConfig,
    pub strategy: StrategyHyper,
    pub train: TrainSpec,
    pub press: PressGenConfig,
    pub permuted: PermutedBenchConfig,
}

impl RunConfig {
    pub fn preset(scale: Scale, dataset: DatasetKind) -> Self {
        let permuted = PermutedBenchConfig::default();
        let side = permuted.image_side;
        let (model, strategy, press) = match scale {
            Scale::Paper => (ModelConfig::default(), StrategyHyper::default(), PressGenConfig::default()),
            Scale::Desk => (ModelConfig::desk(), StrategyHyper::desk(), PressGenConfig::desk()),
        };
        let strategy = match (scale, dataset) {
            (Scale::Desk, DatasetKind::Permuted) => StrategyHyper::desk_permuted(),
            _ => strategy,
        };
        let (model, train) = match dataset {
            DatasetKind::Press => (model, TrainSpec::press()),
            DatasetKind::Permuted => (
                ModelConfig {
                    output_dim: permuted.n_classes,
                    ..ModelConfig {
                        input_dim: side * side,
                        seq_len: side,
                        channels: side,
                        ..model
                    }
                },
                TrainSpec::default(),
            ),
        };
        Self {
            scale,
            experiment: ExperimentConfig {
                dataset,
                ..ExperimentConfig::default()
            },
            model,
            strategy,
            train,
            press,
            permuted,
        }
    }

    /// Reads `path` (if any) over the preset for `scale`.
    pub fn load(path: Option<&Path>, scale: Scale) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::preset(scale, DatasetKind::Press));
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text, scale).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str, scale: Scale) -> Result<Self> {
        let file: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        if file.contains_key("scale") {
            return Err(CliError::Config("the preset is chosen with --scale, not in the file".into()));
        }
        let dataset = match file.get("experiment").and_then(|e| e.get("dataset")) {
            Some(v) => DatasetKind::deserialize(v.clone()).map_err(|e| CliError::Config(e.to_string()))?,
            None => DatasetKind::Press,
        };
        let preset = toml::Table::try_from(Self::preset(scale, dataset))
            .map_err(|e| CliError::Config(e.to_string()))?;
        let mut merged = preset;
        merge(&mut merged, file);
        let config: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.strategy.validate()?;
        self.train.validate()?;
        self.press.validate()?;
        let e = &self.experiment;
        if e.n_products == 0 || e.seq_len == 0 || e.n_sequences == 0 {
            return Err(CliError::Config(
                "n_products, seq_len and n_sequences must be positive".into(),
            ));
        }
        if e.strategies.is_empty() {
            return Err(CliError::Config("at least one strategy is required".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of the resolved configuration.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(canonical.as_bytes()))
    }
}

/// Overlays `over` onto `base`, recursing into tables.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}
