//! Plain-text `section.key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Later assignments
//! to the same key win.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            entries.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Entries under `section.`, with the section prefix stripped.
    pub fn section<'a>(&'a self, section: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        self.iter().filter_map(move |(k, v)| {
            k.strip_prefix(section)
                .and_then(|rest| rest.strip_prefix('.'))
                .map(|rest| (rest, v))
        })
    }

    pub fn sections(&self) -> impl Iterator<Item = &str> {
        let mut seen: Vec<&str> = self.entries.keys().filter_map(|k| k.split_once('.').map(|(s, _)| s)).collect();
        seen.dedup();
        seen.into_iter()
    }

    /// Applies every entry of `section` to `target`; unknown keys are errors.
    pub fn apply<T: Configurable>(&self, section: &str, target: &mut T) -> Result<()> {
        for (key, value) in self.section(section) {
            target.set(key, value).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{section}.{key}: {msg}")),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Something whose fields can be overridden by name.
pub trait Configurable {
    fn set(&mut self, key: &str, value: &str) -> Result<()>;
}

pub(crate) fn parse_value<T: FromStr>(value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| Error::Config(format!("cannot parse `{value}`: {e}")))
}

pub(crate) fn unknown_key(key: &str) -> Error {
    Error::Config(format!("unknown key `{key}`"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_comments() {
        let kv = KeyValues::parse("# comment\nsim.size = 10\n\nmodel.b_income=2.5\nsim.size = 12\n").unwrap();
        assert_eq!(kv.get("sim.size"), Some("12"));
        let model: Vec<_> = kv.section("model").collect();
        assert_eq!(model, vec![("b_income", "2.5")]);
        assert_eq!(kv.sections().collect::<Vec<_>>(), vec!["model", "sim"]);
    }

    #[test]
    fn missing_equals_is_an_error() {
        let err = KeyValues::parse("sim.size 10").unwrap_err();
        assert!(err.to_string().contains("line 1"));
    }
}
