//! Layered settings: command-line flag, then config file, then default.
//!
//! A config file is a JSON object. Keys use the flag names in snake_case
//! (`max_iter`, `out_dir`, ...). A nested object named after the subcommand
//! (`"fit": {...}`) overrides top-level keys for that subcommand only.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

#[derive(Debug, Default)]
pub struct Layered {
    top: Map<String, Value>,
    section: Map<String, Value>,
}

impl Layered {
    pub fn load(path: Option<&Path>, command: &str) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let value: Value =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let Value::Object(mut top) = value else { bail!("config {} must be a JSON object", path.display()) };
        let section = match top.remove(command) {
            Some(Value::Object(m)) => m,
            Some(_) => bail!("config section {command:?} must be an object"),
            None => Map::new(),
        };
        Ok(Self { top, section })
    }

    fn file_value<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        match self.section.get(key).or_else(|| self.top.get(key)) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .with_context(|| format!("config key {key:?} has the wrong type")),
        }
    }

    /// Flag value if given, else the config file's, else `None`.
    pub fn get<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.file_value(key),
        }
    }

    pub fn or<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(self.get(flag, key)?.unwrap_or(default))
    }

    /// Like [`Layered::get`], treating an empty flag list as absent.
    pub fn list<T: DeserializeOwned>(&self, flag: Vec<T>, key: &str) -> Result<Option<Vec<T>>> {
        self.get((!flag.is_empty()).then_some(flag), key)
    }

    /// A boolean switch: set by the flag, or by the file when the flag is off.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool> {
        Ok(flag || self.file_value(key)?.unwrap_or(false))
    }
}

/// Parses a kebab-case enum name the same way the config file does.
pub fn parse_name<T: DeserializeOwned>(raw: &str) -> std::result::Result<T, String> {
    serde_json::from_value(Value::String(raw.to_string())).map_err(|_| format!("unknown value {raw:?}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn precedence_is_flag_then_section_then_top() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        write!(file, r#"{{"k": 3, "tol": 1e-4, "fit": {{"k": 4}}, "select": {{"k": 5}}}}"#).unwrap();
        let cfg = Layered::load(Some(file.path()), "fit").unwrap();
        assert_eq!(cfg.or(Some(2usize), "k", 1).unwrap(), 2);
        assert_eq!(cfg.or(None::<usize>, "k", 1).unwrap(), 4);
        assert_eq!(cfg.or(None::<f64>, "tol", 1e-6).unwrap(), 1e-4);
        assert_eq!(cfg.or(None::<usize>, "max_iter", 1000).unwrap(), 1000);
        assert!(cfg.get::<String>(None, "tol").is_err());
    }

    #[test]
    fn enum_names_match_config_spelling() {
        let init: mogge_core::InitStrategy = parse_name("random-partition").unwrap();
        assert_eq!(init, mogge_core::InitStrategy::RandomPartition);
        assert!(parse_name::<mogge_core::CovarianceKind>("spherical").is_err());
    }
}
