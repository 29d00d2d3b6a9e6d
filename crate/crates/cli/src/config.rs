use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use stapde::dataset::GenConfig;
use stapde::harness::{RolloutConfig, TrainConfig};
use stapde::models::ModelConfig;
use stapde::mvtensor::AdamConfig;
use stapde::Error;

/// Name of the config echo written into every output directory.
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Dataset directory; defaults to `<output_dir>/data`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen: Option<GenConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub rollout: RolloutConfig,
    #[serde(default)]
    pub export: ExportSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub train_split: String,
    pub val_split: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            adam: AdamConfig::default(),
            train_split: "train".into(),
            val_split: "val".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    /// The trained checkpoint.
    #[default]
    Model,
    /// Repeats the most recent input frame.
    Persistence,
    /// Returns the ground truth; a pipeline check.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Splits to evaluate; empty means every split whose name starts with "test".
    pub splits: Vec<String>,
    pub predictor: PredictorKind,
    /// Model name in the CSV; derived from the algebra when empty.
    pub label: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            splits: Vec::new(),
            predictor: PredictorKind::Model,
            label: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSection {
    /// Split to export; defaults to the first evaluated split.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    pub sequence: usize,
    /// Rollout steps (1-based) whose F² maps are written.
    pub steps: Vec<usize>,
}

impl Default for ExportSection {
    fn default() -> Self {
        Self {
            split: None,
            sequence: 0,
            steps: vec![1],
        }
    }
}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

/// Applies `a.b.c=value` to a TOML table. Values parse as TOML, falling
/// back to a plain string; numeric path parts index arrays.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override '{assignment}' is not key=value")))?;
    let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("bad override key '{key}'")));
    }
    let (last, path) = parts.split_last().expect("non-empty key");
    let Some((first, rest)) = path.split_first() else {
        root.insert(last.to_string(), value);
        return Ok(());
    };
    let mut cursor = root
        .entry(first.to_string())
        .or_insert_with(|| toml::Value::Table(Default::default()));
    for part in rest {
        cursor = step_into(cursor, part, key)?;
    }
    match cursor {
        toml::Value::Table(t) => {
            t.insert(last.to_string(), value);
        }
        toml::Value::Array(a) => {
            let i: usize = last.parse().map_err(|_| config_err(format!("'{last}' is not an index in '{key}'")))?;
            let slot = a.get_mut(i).ok_or_else(|| config_err(format!("index {i} out of range in '{key}'")))?;
            *slot = value;
        }
        _ => return Err(config_err(format!("'{key}' does not name a table entry"))),
    }
    Ok(())
}

fn step_into<'a>(v: &'a mut toml::Value, part: &str, key: &str) -> Result<&'a mut toml::Value> {
    match v {
        toml::Value::Table(t) => Ok(t
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()))),
        toml::Value::Array(a) => {
            let i: usize = part.parse().map_err(|_| config_err(format!("'{part}' is not an index in '{key}'")))?;
            a.get_mut(i).ok_or_else(|| config_err(format!("index {i} out of range in '{key}'")))
        }
        _ => Err(config_err(format!("'{key}' passes through a non-table value"))),
    }
}

impl ExperimentConfig {
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| config_err(format!("invalid TOML: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = table.try_into().map_err(|e| config_err(format!("{e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml_with(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(format!("cannot serialize config: {e}")))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.output_dir.join("data"))
    }

    pub fn gen(&self) -> Result<&GenConfig> {
        self.gen.as_ref().ok_or_else(|| config_err("missing [gen] section"))
    }

    pub fn model(&self) -> Result<&ModelConfig> {
        self.model.as_ref().ok_or_else(|| config_err("missing [model] section"))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            adam: t.adam,
            seed: self.seed,
            model: *self.model()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Writes the resolved config into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(RESOLVED_CONFIG);
        fs::write(&path, self.to_toml()?).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
