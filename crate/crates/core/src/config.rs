//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may contain dots
//! to group related settings (`nlm.h`, `grain.0`). Every key must be consumed
//! by the reader; anything left over is reported as unknown.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            if entries
                .insert(key.to_string(), value.trim().to_string())
                .is_some()
            {
                return Err(Error::Config(format!(
                    "line {}: duplicate key `{key}`",
                    lineno + 1
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Removes and parses `key`, if present.
    pub fn take<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| Error::Config(format!("key `{key}`: cannot parse `{raw}`: {e}"))),
        }
    }

    /// Removes and parses a whitespace- or comma-separated list of numbers.
    pub fn take_list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(raw) => parse_list(&raw)
                .map(Some)
                .map_err(|e| Error::Config(format!("key `{key}`: {e}"))),
        }
    }

    /// Keys starting with `prefix`, in sorted order.
    pub fn keys_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.entries
            .keys()
            .filter(|k| k.starts_with(prefix))
            .cloned()
            .collect()
    }

    /// Fails if any key was not consumed.
    pub fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            Ok(())
        } else {
            let keys: Vec<_> = self.entries.into_keys().collect();
            Err(Error::Config(format!("unknown keys: {}", keys.join(", "))))
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

pub fn parse_list(raw: &str) -> std::result::Result<Vec<f64>, String> {
    raw.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| format!("`{s}`: {e}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_consumes() {
        let mut cfg = KvConfig::parse("# comment\nwidth = 320\n\nblur=2.5\nlist = 1, 2 3\n").unwrap();
        assert_eq!(cfg.take::<usize>("width").unwrap(), Some(320));
        assert_eq!(cfg.take::<f64>("blur").unwrap(), Some(2.5));
        assert_eq!(cfg.take_list("list").unwrap(), Some(vec![1.0, 2.0, 3.0]));
        assert_eq!(cfg.take::<f64>("missing").unwrap(), None);
        cfg.finish().unwrap();
    }

    #[test]
    fn rejects_garbage() {
        assert!(KvConfig::parse("no equals sign").is_err());
        assert!(KvConfig::parse("a = 1\na = 2").is_err());
        let mut cfg = KvConfig::parse("a = x\nb = 1").unwrap();
        assert!(cfg.take::<f64>("a").is_err());
        assert!(cfg.finish().is_err());
    }
}
