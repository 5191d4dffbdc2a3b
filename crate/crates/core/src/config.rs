//! Key-value configuration files.
//!
//! A config file is TOML with scalar values. Top-level keys apply to every
//! command; a table named after a command (`[train]`, `[eval-lm]`) overrides
//! them for that command. Keys may use `-` or `_` interchangeably.

use std::path::Path;

use toml::{Table, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    global: Table,
    section: Table,
}

fn normalize(key: &str) -> String {
    key.replace('-', "_")
}

fn flatten(table: &Table) -> Table {
    table
        .iter()
        .filter(|(_, v)| !v.is_table())
        .map(|(k, v)| (normalize(k), v.clone()))
        .collect()
}

impl ConfigFile {
    /// Parses `text`, selecting the section for `command`.
    pub fn parse(text: &str, command: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e| Error::Parse(format!("config: {e}")))?;
        let section = table
            .iter()
            .find(|(k, _)| normalize(k) == normalize(command))
            .map(|(_, v)| match v {
                Value::Table(t) => Ok(flatten(t)),
                _ => Err(Error::Parse(format!("config: `{command}` must be a table"))),
            })
            .transpose()?
            .unwrap_or_default();
        Ok(Self {
            global: flatten(&table),
            section,
        })
    }

    pub fn load(path: &Path, command: &str) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, command)
    }

    fn value(&self, key: &str) -> Option<&Value> {
        let key = normalize(key);
        self.section.get(&key).or_else(|| self.global.get(&key))
    }

    fn mismatch(key: &str, want: &str, got: &Value) -> Error {
        Error::InvalidConfig(format!("config key `{key}` must be {want}, got {got}"))
    }

    pub fn string(&self, key: &str) -> Result<Option<String>> {
        self.value(key)
            .map(|v| match v {
                Value::String(s) => Ok(s.clone()),
                Value::Integer(i) => Ok(i.to_string()),
                Value::Float(f) => Ok(f.to_string()),
                Value::Boolean(b) => Ok(b.to_string()),
                Value::Array(items) => items
                    .iter()
                    .map(|i| match i {
                        Value::String(s) => Ok(s.clone()),
                        Value::Integer(n) => Ok(n.to_string()),
                        Value::Float(f) => Ok(f.to_string()),
                        other => Err(Self::mismatch(key, "a scalar list", other)),
                    })
                    .collect::<Result<Vec<_>>>()
                    .map(|v| v.join(",")),
                other => Err(Self::mismatch(key, "a scalar", other)),
            })
            .transpose()
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>> {
        self.value(key)
            .map(|v| match v {
                Value::Integer(i) if *i >= 0 => Ok(*i as u64),
                other => Err(Self::mismatch(key, "a non-negative integer", other)),
            })
            .transpose()
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        self.value(key)
            .map(|v| match v {
                Value::Float(f) => Ok(*f),
                Value::Integer(i) => Ok(*i as f64),
                other => Err(Self::mismatch(key, "a number", other)),
            })
            .transpose()
    }

    pub fn bool(&self, key: &str) -> Result<Option<bool>> {
        self.value(key)
            .map(|v| match v {
                Value::Boolean(b) => Ok(*b),
                other => Err(Self::mismatch(key, "a boolean", other)),
            })
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = r#"
seed = 3
head-dim = 64
lengths = [128, 512]

[train]
seed = 9
learning_rate = 0.01
"#;

    #[test]
    fn section_overrides_global() {
        let c = ConfigFile::parse(TEXT, "train").unwrap();
        assert_eq!(c.u64("seed").unwrap(), Some(9));
        assert_eq!(c.u64("head_dim").unwrap(), Some(64));
        assert_eq!(c.f64("learning-rate").unwrap(), Some(0.01));
        let g = ConfigFile::parse(TEXT, "eval-lm").unwrap();
        assert_eq!(g.u64("seed").unwrap(), Some(3));
        assert_eq!(g.f64("learning_rate").unwrap(), None);
        assert_eq!(g.string("lengths").unwrap().as_deref(), Some("128,512"));
    }

    #[test]
    fn type_errors_reported() {
        let c = ConfigFile::parse("seed = \"x\"", "train").unwrap();
        assert!(c.u64("seed").is_err());
        assert!(ConfigFile::parse("seed = ", "train").is_err());
    }
}
