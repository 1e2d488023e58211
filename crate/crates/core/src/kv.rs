//! Flat `key = value` text files (configs, synthetic-data specs).

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    /// `#` starts a comment; blank lines are skipped; keys must be unique.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected `key = value`", i + 1)))?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::config(format!("line {}: empty key", i + 1)));
            }
            let value = v.trim().trim_matches('"').to_string();
            if entries.insert(key.clone(), (i + 1, value)).is_some() {
                return Err(Error::config(format!("line {}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(KeyValues { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((_, v)) if v.is_empty() => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::config(format!("line {line}: bad value `{v}` for `{key}`"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| Error::config(format!("missing required key `{key}`")))
    }

    /// Comma-separated list; an empty value is an empty list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        let Some((line, v)) = self.entries.get(key) else {
            return Ok(None);
        };
        let v = v.trim_matches(|c| c == '[' || c == ']');
        if v.trim().is_empty() {
            return Ok(Some(Vec::new()));
        }
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::config(format!("line {line}: bad list item `{s}` for `{key}`")))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    /// Fails on any key outside `allowed`.
    pub fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for (k, (line, _)) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::config(format!("line {line}: unknown key `{k}`")));
            }
        }
        Ok(())
    }
}

pub(crate) fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}
