//! Merging command-line flags over an optional JSON config file.

use std::path::{Path, PathBuf};

use log::warn;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

/// Overlay the flags that were given on the keys of `file` (a JSON object
/// whose keys are flag names in snake case) and deserialize the result.
/// A flag that contradicts the file wins, with a logged notice.
pub fn merge<F: Serialize, R: DeserializeOwned>(flags: &F, file: Option<&Path>) -> Result<R, CliError> {
    let mut merged = match file {
        None => Map::new(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("reading config {}: {e}", path.display())))?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(map)) => map,
                Ok(_) => return Err(CliError::Data(format!("{}: config must be a JSON object", path.display()))),
                Err(e) => return Err(CliError::Data(format!("{}: {e}", path.display()))),
            }
        }
    };
    let Value::Object(given) = serde_json::to_value(flags).expect("flags serialize") else {
        unreachable!("flag structs serialize to objects")
    };
    for (key, value) in given {
        if value.is_null() {
            continue;
        }
        if let Some(old) = merged.get(&key) {
            if *old != value {
                warn!("--{} {value} overrides config file value {old}", key.replace('_', "-"));
            }
        }
        merged.insert(key, value);
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("config: {e}")))
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSettings {
    pub subjects: u32,
    pub trials_per_target: u32,
    pub separation: f64,
    pub seed: u64,
    pub fs: f64,
    pub out: Option<PathBuf>,
}

impl Default for GenerateSettings {
    fn default() -> Self {
        Self {
            subjects: 6,
            trials_per_target: 10,
            separation: 1.0,
            seed: 0,
            fs: 250.0,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSettings {
    pub manifest: Option<PathBuf>,
    pub filter: String,
    pub mode: String,
    pub window: usize,
    pub stats: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for PreprocessSettings {
    fn default() -> Self {
        Self {
            manifest: None,
            filter: "butter:4:7".into(),
            mode: "zero-phase".into(),
            window: 7,
            stats: None,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub subset: String,
    pub folds: usize,
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub width_mult: f64,
    pub window: usize,
    pub filter: String,
    pub mode: String,
    pub leakage: String,
    pub jobs: usize,
    pub determinism: String,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            manifest: None,
            out: None,
            subset: "all".into(),
            folds: 10,
            epochs: 100,
            seed: 0,
            batch_size: 64,
            lr: 1e-3,
            width_mult: 0.25,
            window: 7,
            filter: "butter:4:7".into(),
            mode: "zero-phase".into(),
            leakage: "trial".into(),
            jobs: 1,
            determinism: "on".into(),
        }
    }
}

/// A required path that neither the flags nor the config file supplied.
pub fn required(value: Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("--{flag} is required")))
}
