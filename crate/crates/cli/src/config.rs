//! Per-subcommand configuration files. Every field is optional in the TOML;
//! missing fields take the defaults below, and command-line flags win.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use mortonnet::datagen::ShapeKind;
use mortonnet::downstream::ClassifierTrainConfig;
use mortonnet::model::ModelConfig;
use mortonnet::morton::OrderingScheme;
use mortonnet::train::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
    }
}

/// JSON echo of the resolved configuration embedded in every artifact.
pub fn echo<T: Serialize>(command: &str, cfg: &T) -> Result<String> {
    Ok(serde_json::to_string(&serde_json::json!({ "command": command, "config": cfg }))?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub shape: ShapeKind,
    pub n_points: usize,
    pub noise_sigma: f64,
    pub random_pose: bool,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            shape: ShapeKind::Sphere,
            n_points: 2000,
            noise_sigma: 0.0,
            random_pose: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequencesConfig {
    pub k: usize,
    pub m: usize,
    pub scheme: OrderingScheme,
    pub seed: u64,
    pub bits: u32,
    /// Generate only for this many seeded centers instead of every point.
    pub centers: Option<usize>,
}

impl Default for SequencesConfig {
    fn default() -> Self {
        Self {
            k: 16,
            m: 5,
            scheme: OrderingScheme::Morton,
            seed: 0,
            bits: 16,
            centers: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCmdConfig {
    /// `k` is taken from the dataset.
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub rho: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { rho: 0.02 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub m: usize,
    pub scheme: OrderingScheme,
    pub seed: u64,
    pub bits: u32,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            m: 5,
            scheme: OrderingScheme::Morton,
            seed: 0,
            bits: 16,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyConfig {
    pub classifier: ClassifierTrainConfig,
    /// Held-out share when no test file is given.
    pub test_fraction: f64,
    /// Inferred from the largest label when absent.
    pub num_classes: Option<usize>,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            classifier: ClassifierTrainConfig::default(),
            test_fraction: 0.2,
            num_classes: None,
        }
    }
}
