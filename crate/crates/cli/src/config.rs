//! Flat key-value run configuration.
//!
//! The on-disk format is one `key = value` pair per line, `#` comments,
//! blank lines ignored. Keys are bare words; values are free text trimmed
//! of surrounding whitespace. The parsed map is echoed verbatim into the
//! run manifest so every run is diffable and reproducible from its
//! manifest alone.

use std::collections::BTreeMap;
use std::path::Path;

use crate::CliError;

/// Ordered key-value settings; later inserts override earlier ones.
#[derive(Debug, Clone, Default)]
pub struct FlatConfig {
    map: BTreeMap<String, String>,
}

impl FlatConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::validation(format!(
                    "config line {}: expected `key = value`, got {line:?}",
                    i + 1
                )));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(CliError::validation(format!("config line {}: empty key", i + 1)));
            }
            map.insert(key.to_string(), value.trim().to_string());
        }
        Ok(FlatConfig { map })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    /// The full echo, for manifests.
    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.map
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Option<T>, CliError> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| {
                CliError::validation(format!("config key {key}: {v:?} is not {what}"))
            }),
        }
    }

    pub fn f64(&self, key: &str, default: f64) -> Result<f64, CliError> {
        Ok(self.parsed::<f64>(key, "a number")?.unwrap_or(default))
    }

    pub fn usize(&self, key: &str, default: usize) -> Result<usize, CliError> {
        Ok(self.parsed::<usize>(key, "a non-negative integer")?.unwrap_or(default))
    }

    pub fn u64(&self, key: &str, default: u64) -> Result<u64, CliError> {
        Ok(self.parsed::<u64>(key, "a non-negative integer")?.unwrap_or(default))
    }

    pub fn bool(&self, key: &str, default: bool) -> Result<bool, CliError> {
        Ok(self.parsed::<bool>(key, "true or false")?.unwrap_or(default))
    }

    pub fn require_f64(&self, key: &str) -> Result<f64, CliError> {
        self.parsed::<f64>(key, "a number")?
            .ok_or_else(|| CliError::validation(format!("missing required config key {key}")))
    }

    /// Comma-separated number list.
    pub fn f64_list(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|_| {
                        CliError::validation(format!(
                            "config key {key}: {s:?} is not a number in a comma list"
                        ))
                    })
                })
                .collect::<Result<Vec<f64>, CliError>>()
                .map(Some),
        }
    }
}
