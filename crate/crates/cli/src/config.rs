//! JSON config file ingestion. Each section is merged under the matching
//! command-line group; flags win over file values.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub problem: Option<Value>,
    pub tolerance: Option<Value>,
    pub validate: Option<Value>,
    pub solve_eps: Option<Value>,
    pub slope: Option<Value>,
    pub homogenize: Option<Value>,
    pub rate: Option<Value>,
    pub sharpness: Option<Value>,
    pub stability: Option<Value>,
    pub transport: Option<Value>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        // serde_json errors carry "line L column C".
        Ok(serde_json::from_str(text)?)
    }
}

/// Overlays the non-null fields of `flags` on the file section and decodes the result.
pub fn merge<T: Serialize + DeserializeOwned>(
    section: &str,
    file: Option<&Value>,
    flags: &T,
) -> Result<T> {
    let mut merged = match file {
        None | Some(Value::Null) => Map::new(),
        Some(Value::Object(map)) => map.clone(),
        Some(other) => anyhow::bail!("config section `{section}` must be an object, found {other}"),
    };
    if let Value::Object(cli) = serde_json::to_value(flags)? {
        for (key, value) in cli {
            if !value.is_null() {
                merged.insert(key, value);
            }
        }
    }
    serde_json::from_value(Value::Object(merged))
        .with_context(|| format!("config section `{section}`"))
}
