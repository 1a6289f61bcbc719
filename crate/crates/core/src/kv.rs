//! Plain `key value` text files, used for configs and fitted models.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{parse_err, Error, Result};

/// Ordered key-value pairs. Blank lines and `#` comments are ignored; the
/// value is the rest of the line after the first run of whitespace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = match line.split_once(char::is_whitespace) {
                Some((k, v)) => (k, v.trim()),
                None => return Err(parse_err(i + 1, format!("key '{line}' has no value"))),
            };
            if entries.insert(key.to_string(), (i + 1, value.to_string())).is_some() {
                return Err(parse_err(i + 1, format!("duplicate key '{key}'")));
            }
        }
        Ok(Self { entries })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(_, v)| v.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| parse_err(*line, format!("{key}: {e}"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.get(key)?
            .ok_or_else(|| Error::Parse { line: 0, msg: format!("missing key '{key}'") })
    }

    /// Overwrites `slot` when `key` is present.
    pub fn set<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()>
    where
        T::Err: Display,
    {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    /// Whitespace-separated list of numbers.
    pub fn floats(&self, key: &str) -> Result<Vec<f64>> {
        let (line, v) = self
            .entries
            .get(key)
            .ok_or_else(|| Error::Parse { line: 0, msg: format!("missing key '{key}'") })?;
        v.split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| parse_err(*line, format!("{key}: bad number '{t}'"))))
            .collect()
    }
}
