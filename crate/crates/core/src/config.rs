//! Run configuration: preset defaults overlaid with a flat JSON file whose
//! keys are dotted paths (`"model.encoder.layers": 2`) and then with
//! command-line `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::corpus::SynthConfig;
use crate::model::{ModelConfig, Preset};
use crate::training::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    /// JSON-lines files of per-token vectors, aligned with the corpora, for
    /// models that read precomputed embeddings.
    pub train_vectors: Option<PathBuf>,
    pub dev_vectors: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub batch_size: usize,
    pub subsets: bool,
    pub patterns: bool,
    pub throughput: bool,
    /// Overrides the checkpoint's decoding threshold when set.
    pub threshold: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            batch_size: 20,
            subsets: false,
            patterns: false,
            throughput: false,
            threshold: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::preset(Preset::Desk)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config key {key:?}: {message}")]
    BadValue { key: String, message: String },
    #[error("override {0:?} is not of the form key=value")]
    BadOverride(String),
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        RunConfig {
            preset,
            model: ModelConfig::preset(preset),
            train: TrainConfig::preset(preset),
            data: DataConfig::default(),
            eval: EvalConfig::default(),
            synth: SynthConfig::default(),
        }
    }

    /// Applies dotted-key settings in order. Keys must name an existing field.
    pub fn with_settings<'a, I>(&self, settings: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (&'a str, Value)>,
    {
        let mut tree = serde_json::to_value(self).expect("config serializes");
        for (key, value) in settings {
            if key == "preset" {
                return Err(ConfigError::BadValue {
                    key: key.into(),
                    message: "use the --preset flag".into(),
                });
            }
            set_path(&mut tree, key, value)?;
        }
        serde_json::from_value(tree).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn to_flat_json(&self) -> Value {
        let mut out = Map::new();
        flatten("", &serde_json::to_value(self).expect("config serializes"), &mut out);
        Value::Object(out)
    }
}

fn set_path(tree: &mut Value, key: &str, value: Value) -> Result<(), ConfigError> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        let slot = obj
            .get_mut(*part)
            .ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        if i + 1 == parts.len() {
            if slot.is_object() && !value.is_object() {
                return Err(ConfigError::BadValue {
                    key: key.into(),
                    message: "expects an object".into(),
                });
            }
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    unreachable!("split yields at least one part")
}

fn flatten(prefix: &str, v: &Value, out: &mut Map<String, Value>) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, child, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

/// Reads a flat JSON object of dotted keys.
pub fn read_settings(path: &Path) -> Result<Vec<(String, Value)>, ConfigError> {
    let file_err = |message: String| ConfigError::File {
        path: path.to_path_buf(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))?;
    match value {
        Value::Object(m) => Ok(m.into_iter().collect()),
        _ => Err(file_err("expected a JSON object".into())),
    }
}

/// Parses `key=value`; the value is read as JSON when it parses, else as a string.
pub fn parse_override(text: &str) -> Result<(String, Value), ConfigError> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(text.to_string()))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}
