//! Run configuration files (JSON) with dotted-key command-line overrides.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

/// One file configures both dataset synthesis and training so a run directory
/// snapshot is sufficient to reproduce a run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunFileConfig {
    pub dataset: SynthConfig,
    pub train: TrainConfig,
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<RunFileConfig> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&body).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
    apply_overrides(&mut value, overrides)?;
    serde_json::from_value(value).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Apply `key.path=value` overrides. Every referenced key must already exist
/// in the document; values parse as JSON scalars, falling back to strings.
pub fn apply_overrides(value: &mut serde_json::Value, overrides: &[String]) -> Result<()> {
    for entry in overrides {
        let (path, raw) = entry.split_once('=').ok_or_else(|| {
            Error::Config(format!("override '{entry}' must look like key.path=value"))
        })?;
        let pointer = format!("/{}", path.replace('.', "/"));
        let slot = value.pointer_mut(&pointer).ok_or_else(|| {
            Error::Config(format!("override '{path}': unknown key '{path}'"))
        })?;
        *slot = parse_scalar(raw);
    }
    Ok(())
}

fn parse_scalar(raw: &str) -> serde_json::Value {
    serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()))
}

pub fn to_pretty_json(config: &RunFileConfig) -> Result<String> {
    serde_json::to_string_pretty(config).map_err(|e| Error::Config(e.to_string()))
}
