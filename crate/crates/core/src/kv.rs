//! Flat `key = value` documents used for job, source and fine-tune configs.
//!
//! Lines starting with `#` and blank lines are ignored. The first `=` splits
//! key from value; both sides are trimmed. Keys may contain spaces and dots.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum KvError {
    #[error("line {line}: expected `key = value`")]
    MissingEquals { line: usize },
    #[error("line {line}: empty key")]
    EmptyKey { line: usize },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("key `{key}`: cannot parse `{value}`")]
    BadValue { key: String, value: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvDocument {
    entries: Vec<(String, String)>,
}

impl KvDocument {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(src: &str) -> Result<Self, KvError> {
        let mut doc = KvDocument::new();
        for (idx, raw) in src.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(KvError::MissingEquals { line: line_no })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(KvError::EmptyKey { line: line_no });
            }
            if doc.get(key).is_some() {
                return Err(KvError::DuplicateKey {
                    line: line_no,
                    key: key.to_owned(),
                });
            }
            doc.entries.push((key.to_owned(), value.trim().to_owned()));
        }
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self, KvError> {
        let src = std::fs::read_to_string(path).map_err(|e| KvError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&src)
    }

    /// Appends an entry, replacing an existing value for the same key in place.
    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let key = key.into();
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, KvError> {
        self.get(key).ok_or_else(|| KvError::MissingKey(key.to_owned()))
    }

    pub fn get_parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, KvError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| KvError::BadValue {
                key: key.to_owned(),
                value: v.to_owned(),
            }),
        }
    }

    /// Entries whose key starts with `prefix`, with the prefix removed, in document order.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> {
        self.entries
            .iter()
            .filter_map(move |(k, v)| k.strip_prefix(prefix).map(|rest| (rest, v.as_str())))
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

impl fmt::Display for KvDocument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
