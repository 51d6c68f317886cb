//! Flat `key = value` config files. Values from a file override command-line
//! flags, so a config file pins an experiment down completely.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Default, Clone)]
pub struct ConfigMap {
    values: HashMap<String, String>,
}

impl ConfigMap {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| {
            Error::Config(format!("{}: {e}", path.display()))
        })
    }

    /// Lines are `key = value`; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut values = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", lineno + 1))?;
            let key = k.trim();
            if key.is_empty() {
                return Err(format!("line {}: empty key", lineno + 1));
            }
            if values.insert(key.to_string(), v.trim().to_string()).is_some() {
                return Err(format!("line {}: duplicate key `{key}`", lineno + 1));
            }
        }
        Ok(Self { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Parse `key` if present; a malformed value is an error, absence is not.
    pub fn get_parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                Error::Config(format!("key `{key}`: cannot parse `{raw}`"))
            }),
        }
    }

    /// Value from the config file, else the flag value.
    pub fn override_parsed<T: FromStr>(&self, key: &str, flag: T) -> Result<T> {
        Ok(self.get_parsed(key)?.unwrap_or(flag))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_blanks_and_values() {
        let cfg = ConfigMap::parse("# experiment\n\nalpha = 0.7\n seed=9 \nname = bsc run\n").unwrap();
        assert_eq!(cfg.get("alpha"), Some("0.7"));
        assert_eq!(cfg.get("seed"), Some("9"));
        assert_eq!(cfg.get("name"), Some("bsc run"));
        assert_eq!(cfg.get("missing"), None);
    }

    #[test]
    fn typed_access_and_overrides() {
        let cfg = ConfigMap::parse("alpha = 0.7\nepochs = 12").unwrap();
        assert_eq!(cfg.get_parsed::<f64>("alpha").unwrap(), Some(0.7));
        assert_eq!(cfg.override_parsed("epochs", 3usize).unwrap(), 12);
        assert_eq!(cfg.override_parsed("batch", 8usize).unwrap(), 8);
        assert!(cfg.get_parsed::<usize>("alpha").is_err());
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(ConfigMap::parse("just a line").is_err());
        assert!(ConfigMap::parse("= 3").is_err());
        assert!(ConfigMap::parse("a = 1\na = 2").is_err());
    }
}
