//! Layered configuration: preset, then an optional TOML file, then
//! `section.field=value` overrides from the command line.
//!
//! ```toml
//! preset = "desk"
//!
//! [system]
//! n = 128
//! snr_db = 10.0
//!
//! [train]
//! lr0 = 0.003
//! grid = [[48, 10.0], [32, 5.0]]
//! ```
//!
//! Keys of `[system]` and `[train]` are exactly the field names of
//! [`SystemConfig`] and [`TrainConfig`]; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thzce::training::TrainConfig;
use thzce::{Error, Result, SystemConfig};
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub preset: String,
    pub system: SystemConfig,
    pub train: TrainConfig,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

fn to_table<T: Serialize>(value: &T) -> Result<Table> {
    Table::try_from(value).map_err(|e| invalid(e.to_string()))
}

fn merge(base: &mut Table, over: Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_value(text: &str) -> Value {
    match format!("v = {text}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(text.into())),
        Err(_) => Value::String(text.into()),
    }
}

fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (path, text) = assignment
        .split_once('=')
        .ok_or_else(|| invalid(format!("override `{assignment}` is not of the form section.field=value")))?;
    let (section, field) = path
        .trim()
        .split_once('.')
        .ok_or_else(|| invalid(format!("override key `{path}` must be system.FIELD or train.FIELD")))?;
    let Some(Value::Table(sec)) = table.get_mut(section) else {
        return Err(invalid(format!("unknown section `{section}`")));
    };
    if !sec.contains_key(field) && !(section == "train" && field == "grad_clip") {
        return Err(invalid(format!("unknown field `{section}.{field}`")));
    }
    sec.insert(field.to_string(), parse_value(text.trim()));
    Ok(())
}

impl Settings {
    pub fn preset(name: &str) -> Result<Self> {
        Ok(Self { preset: name.into(), system: SystemConfig::preset(name)?, train: TrainConfig::default() })
    }

    /// `preset` (default `desk`, or the file's own `preset` key), then the file,
    /// then the overrides. A preset given on the command line wins over the
    /// file's.
    pub fn load(preset: Option<&str>, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let file_table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                Some(text.parse::<Table>().map_err(|e| invalid(format!("{}: {e}", path.display())))?)
            }
            None => None,
        };
        let file_preset = file_table.as_ref().and_then(|t| t.get("preset")).and_then(Value::as_str);
        let name = preset.or(file_preset).unwrap_or("desk").to_string();
        let mut table = to_table(&Self::preset(&name)?)?;
        if let Some(mut over) = file_table {
            over.remove("preset");
            merge(&mut table, over);
        }
        for assignment in overrides {
            apply_override(&mut table, assignment)?;
        }
        let settings: Self = Value::Table(table).try_into().map_err(|e: toml::de::Error| invalid(e.to_string()))?;
        settings.system.validate()?;
        settings.train.validate()?;
        Ok(settings)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| invalid(e.to_string()))
    }
}
