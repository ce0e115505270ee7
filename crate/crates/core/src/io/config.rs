//! Flat `key = value` configuration text.
//!
//! Blank lines and lines starting with `#` are ignored. Keys use the long
//! CLI flag names without the leading dashes.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return Err(Error::Config(format!("line {}: bad key `{key}`", n + 1)));
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", n + 1)));
            }
        }
        Ok(ConfigMap { entries })
    }

    /// Later values win; used to lay CLI flags over a file.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
            })
            .transpose()
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|item| {
                        item.trim()
                            .parse::<T>()
                            .map_err(|_| Error::Config(format!("bad list item `{item}` for `{key}`")))
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        match self.get(key) {
            None => Ok(false),
            Some("true" | "1" | "yes") => Ok(true),
            Some("false" | "0" | "no") => Ok(false),
            Some(other) => Err(Error::Config(format!("bad boolean `{other}` for `{key}`"))),
        }
    }

    /// Canonical text form: sorted `key = value` lines.
    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overrides() {
        let mut c = ConfigMap::parse("# exp\nK = 32\n\nvariants = explet, fv\nno-norm = true\n").unwrap();
        assert_eq!(c.parsed::<usize>("K").unwrap(), Some(32));
        assert_eq!(c.list::<String>("variants").unwrap().unwrap(), vec!["explet", "fv"]);
        assert!(c.flag("no-norm").unwrap());
        assert!(!c.flag("absent").unwrap());
        c.set("K", "64");
        assert_eq!(c.parsed::<usize>("K").unwrap(), Some(64));
        assert_eq!(ConfigMap::parse(&c.render()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(ConfigMap::parse("just words").is_err());
        assert!(ConfigMap::parse("a = 1\na = 2").is_err());
        assert!(ConfigMap::parse(" = 3").is_err());
        let c = ConfigMap::parse("K = many").unwrap();
        assert!(matches!(c.parsed::<usize>("K"), Err(Error::Config(_))));
    }
}
