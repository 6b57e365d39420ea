//! Experiment config files: TOML documents with an optional `extends` key
//! naming a base file (resolved relative to the extending file), followed
//! by command-line `key=value` overrides.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use hazboard::ExperimentConfig;
use toml::{Table, Value};

/// Any problem with the configuration itself. Maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Reads `path` and every file it extends, merging children over parents.
pub fn load_table(path: &Path) -> Result<Table, ConfigError> {
    let mut seen = HashSet::new();
    load_rec(path, &mut seen)
}

fn load_rec(path: &Path, seen: &mut HashSet<PathBuf>) -> Result<Table, ConfigError> {
    let canonical = path
        .canonicalize()
        .map_err(|e| err(format!("cannot read {}: {e}", path.display())))?;
    if !seen.insert(canonical.clone()) {
        return Err(err(format!("`extends` cycle through {}", path.display())));
    }
    let text = std::fs::read_to_string(&canonical).map_err(|e| err(format!("cannot read {}: {e}", path.display())))?;
    let mut table: Table = text.parse().map_err(|e| err(format!("{}: {e}", path.display())))?;
    match table.remove("extends") {
        None => Ok(table),
        Some(Value::String(base)) => {
            let base_path = canonical.parent().unwrap_or(Path::new(".")).join(base);
            let mut merged = load_rec(&base_path, seen)?;
            merge(&mut merged, table);
            Ok(merged)
        }
        Some(_) => Err(err(format!("{}: `extends` must be a string path", path.display()))),
    }
}

/// Deep merge: tables merge key by key, anything else is replaced.
pub fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies `section.key=value`. The value is parsed as a TOML value and
/// falls back to a bare string.
pub fn apply_override(table: &mut Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| err(format!("override `{spec}` is not key=value")))?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(err(format!("override key `{key}` is malformed")));
    }
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in path {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| err(format!("override `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Deserializes and validates. Unknown keys are rejected.
pub fn resolve(table: Table) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = Value::Table(table).try_into().map_err(|e: toml::de::Error| err(e.to_string()))?;
    cfg.validate().map_err(|e| err(e.to_string()))?;
    Ok(cfg)
}

/// Loads `path` (or the defaults when absent) and applies `overrides`.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    let mut table = match path {
        Some(p) => load_table(p)?,
        None => Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    resolve(table)
}

/// Canonical TOML snapshot of a resolved config.
pub fn to_toml(cfg: &ExperimentConfig) -> Result<String, ConfigError> {
    toml::to_string(cfg).map_err(|e| err(e.to_string()))
}

pub fn from_toml(text: &str) -> Result<ExperimentConfig, ConfigError> {
    resolve(text.parse().map_err(|e: toml::de::Error| err(e.to_string()))?)
}
