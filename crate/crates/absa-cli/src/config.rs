//! Optional key=value config file (TOML syntax, flat keys named like the
//! long flags). Flags win over file values, file values win over defaults,
//! and the full effective configuration is echoed into the run's output
//! directory so every experiment is reproducible from its artifacts.

use std::path::Path;

use anyhow::{bail, Context, Result};

#[derive(Default)]
pub struct FileConfig(toml::Table);

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let table: toml::Table = text
            .parse()
            .with_context(|| format!("parsing config file {}", path.display()))?;
        Ok(Self(table))
    }

    fn get(&self, key: &str) -> Option<&toml::Value> {
        self.0.get(key)
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_float()
                .or_else(|| v.as_integer().map(|i| i as f64))
                .map(Some)
                .ok_or_else(|| anyhow::anyhow!("config key {key:?} is not a number")),
        }
    }

    pub fn usize(&self, key: &str) -> Result<Option<usize>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => match v.as_integer() {
                Some(i) if i >= 0 => Ok(Some(i as usize)),
                _ => bail!("config key {key:?} is not a non-negative integer"),
            },
        }
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => match v.as_integer() {
                Some(i) if i >= 0 => Ok(Some(i as u64)),
                _ => bail!("config key {key:?} is not a non-negative integer"),
            },
        }
    }

    pub fn string(&self, key: &str) -> Result<Option<String>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_str()
                .map(|s| Some(s.to_string()))
                .ok_or_else(|| anyhow::anyhow!("config key {key:?} is not a string")),
        }
    }

    pub fn bool(&self, key: &str) -> Result<Option<bool>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .as_bool()
                .map(Some)
                .ok_or_else(|| anyhow::anyhow!("config key {key:?} is not a boolean")),
        }
    }
}

/// Flag > config file > default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
