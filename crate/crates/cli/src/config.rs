//! Flag/file configuration merging and the resolved-config echo.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";

/// Overlays the flags that were given on the config file (if any), then
/// fills the rest from the config type's defaults.
pub fn resolve<F: Serialize, C: DeserializeOwned>(file: Option<&Path>, flags: &F) -> Result<C> {
    let mut merged = match file {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            match serde_json::from_str::<Value>(&text)
                .with_context(|| format!("parsing config {}", path.display()))?
            {
                Value::Object(m) => m,
                _ => bail!("config {} must hold a JSON object", path.display()),
            }
        }
        None => Map::new(),
    };
    if let Value::Object(given) = serde_json::to_value(flags)? {
        for (k, v) in given {
            if !v.is_null() {
                merged.insert(k, v);
            }
        }
    }
    let what = file
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| "flags".into());
    serde_json::from_value(Value::Object(merged))
        .with_context(|| format!("invalid configuration ({what})"))
}

/// Writes the effective configuration as pretty JSON into `dir`.
pub fn echo<C: Serialize>(dir: &Path, config: &C) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut text = serde_json::to_string_pretty(config)?;
    text.push('\n');
    let path = dir.join(RESOLVED_CONFIG);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn require<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T> {
    value.as_ref().with_context(|| {
        format!(
            "missing required setting '{name}' (flag --{} or config key)",
            name.replace('_', "-")
        )
    })
}

pub fn require_path<'a>(value: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    require(value, name).map(|p| p.as_path())
}
