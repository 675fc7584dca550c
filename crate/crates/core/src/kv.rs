//! Flat `key = value` text documents.
//!
//! Region sets, networks, experiment configs and reports all share this
//! layout: one entry per line, dotted keys for sections, `#` starts a comment
//! line. Entry order is preserved so that printing is canonical.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvDocument {
    entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    key: String,
    value: String,
    line: usize,
}

impl KvDocument {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = KvDocument::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| Error::Parse {
                line,
                message: format!("expected `key = value`, found {trimmed:?}"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    line,
                    message: "empty key".into(),
                });
            }
            if doc.entries.iter().any(|e| e.key == key) {
                return Err(Error::Parse {
                    line,
                    message: format!("duplicate key {key:?}"),
                });
            }
            doc.entries.push(Entry {
                key: key.to_string(),
                value: value.trim().to_string(),
                line,
            });
        }
        Ok(doc)
    }

    /// Sets `key`, replacing an existing value in place.
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|e| e.key == key) {
            Some(e) => e.value = value,
            None => self.entries.push(Entry {
                key,
                value,
                line: 0,
            }),
        }
    }

    pub fn set_floats(&mut self, key: impl Into<String>, values: &[f64]) {
        self.set(key, join_floats(values));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.key == key)
            .map(|e| e.value.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.key.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Config {
            key: key.to_string(),
            message: "missing required key".into(),
        })
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.require(key)?;
        raw.parse::<T>().map_err(|e| self.value_error(key, raw, e))
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            Some(_) => self.parse_value(key),
            None => Ok(default),
        }
    }

    pub fn floats(&self, key: &str) -> Result<Vec<f64>> {
        let raw = self.require(key)?;
        raw.split_whitespace()
            .map(|tok| tok.parse::<f64>().map_err(|e| self.value_error(key, tok, e)))
            .collect()
    }

    fn value_error(&self, key: &str, raw: &str, err: impl std::fmt::Display) -> Error {
        let line = self
            .entries
            .iter()
            .find(|e| e.key == key)
            .map(|e| e.line)
            .unwrap_or(0);
        Error::Config {
            key: key.to_string(),
            message: format!("invalid value {raw:?} (line {line}): {err}"),
        }
    }

    pub fn line_of(&self, key: &str) -> Option<usize> {
        self.entries.iter().find(|e| e.key == key).map(|e| e.line)
    }

    pub fn to_text(&self, header: &str) -> String {
        let mut out = String::new();
        for line in header.lines() {
            let _ = writeln!(out, "# {line}");
        }
        for e in &self.entries {
            let _ = writeln!(out, "{} = {}", e.key, e.value);
        }
        out
    }
}

/// Shortest round-trip decimal for `x`, switching to exponent form for very
/// small or very large magnitudes.
pub fn fmt_float(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| fmt_float(*v))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_print() {
        let doc = KvDocument::parse("# hi\n a.b = 1\n\nc = x y z\n").unwrap();
        assert_eq!(doc.get("a.b"), Some("1"));
        assert_eq!(doc.get("c"), Some("x y z"));
        let again = KvDocument::parse(&doc.to_text("hdr")).unwrap();
        assert_eq!(again.get("c"), doc.get("c"));
        assert_eq!(doc.line_of("c"), Some(4));
    }

    #[test]
    fn rejects_garbage_and_duplicates() {
        assert!(matches!(
            KvDocument::parse("novalue"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(KvDocument::parse("a = 1\na = 2").is_err());
    }

    #[test]
    fn floats_round_trip() {
        let xs = [0.0, -1.25, 1e-320, 6.62e-3, 123456.789, f64::MIN_POSITIVE, 1e300];
        let mut doc = KvDocument::new();
        doc.set_floats("v", &xs);
        let back = KvDocument::parse(&doc.to_text("")).unwrap().floats("v").unwrap();
        assert_eq!(back, xs);
    }

    #[test]
    fn bad_number_names_key() {
        let doc = KvDocument::parse("net.epochs = ten").unwrap();
        let err = doc.parse_value::<usize>("net.epochs").unwrap_err();
        assert!(err.to_string().starts_with("net.epochs"));
    }
}
