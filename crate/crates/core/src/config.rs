//! Flat `key = value` text configuration.
//!
//! One pair per line, `#` starts a comment, blank lines are ignored. Keys are
//! unique. Typed access names the offending key on failure.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{field}`: {reason}")]
    InvalidValue { field: String, reason: String },
}

impl ConfigError {
    /// The key the error is about, when there is one.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Duplicate { key, .. } => Some(key),
            ConfigError::UnknownKey(k) => Some(k),
            ConfigError::InvalidValue { field, .. } => Some(field),
            ConfigError::Syntax { .. } => None,
        }
    }
}

pub type Result<T, E = ConfigError> = std::result::Result<T, E>;

/// Ordered key-value pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KvConfig {
    entries: Vec<(String, String)>,
}

fn valid_key(k: &str) -> bool {
    !k.is_empty()
        && k.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '-')
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = KvConfig::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                reason: "expected `key = value`".into(),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if !valid_key(k) {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    reason: format!("invalid key `{k}`"),
                });
            }
            if cfg.get(k).is_some() {
                return Err(ConfigError::Duplicate {
                    line: i + 1,
                    key: k.to_string(),
                });
            }
            cfg.entries.push((k.to_string(), v.to_string()));
        }
        Ok(cfg)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Inserts or replaces.
    pub fn set(&mut self, key: &str, value: impl fmt::Display) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Typed lookup with a default for missing keys.
    pub fn get_or<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e: T::Err| ConfigError::InvalidValue {
                field: key.to_string(),
                reason: format!("`{v}`: {e}"),
            }),
        }
    }

    /// Comma-separated list.
    pub fn get_list<T>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T: FromStr,
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) if v.is_empty() => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|e: T::Err| ConfigError::InvalidValue {
                            field: key.to_string(),
                            reason: format!("`{s}`: {e}"),
                        })
                })
                .collect(),
        }
    }

    /// Fails on the first key not in `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<()> {
        match self.keys().find(|k| !known.contains(k)) {
            Some(k) => Err(ConfigError::UnknownKey(k.to_string())),
            None => Ok(()),
        }
    }
}

impl fmt::Display for KvConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

/// Error for a value that parsed but is out of range.
pub fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blanks() {
        let c = KvConfig::parse("# header\n\na = 1\nb=two # trailing\n  c =  \n").unwrap();
        assert_eq!(c.get("a"), Some("1"));
        assert_eq!(c.get("b"), Some("two"));
        assert_eq!(c.get("c"), Some(""));
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn syntax_errors_carry_line() {
        assert_eq!(
            KvConfig::parse("a = 1\noops\n"),
            Err(ConfigError::Syntax {
                line: 2,
                reason: "expected `key = value`".into()
            })
        );
        assert!(matches!(
            KvConfig::parse("a b = 1"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            KvConfig::parse("a=1\na=2"),
            Err(ConfigError::Duplicate { line: 2, .. })
        ));
    }

    #[test]
    fn typed_access_names_field() {
        let c = KvConfig::parse("h = 0.1\nn = x\nlist = 1, 2.5,3").unwrap();
        assert_eq!(c.get_or("h", 0.5).unwrap(), 0.1);
        assert_eq!(c.get_or("missing", 7u32).unwrap(), 7);
        let e = c.get_or::<u32>("n", 0).unwrap_err();
        assert_eq!(e.field(), Some("n"));
        assert_eq!(
            c.get_list::<f64>("list", vec![]).unwrap(),
            vec![1.0, 2.5, 3.0]
        );
        assert_eq!(
            c.reject_unknown(&["h", "n"]),
            Err(ConfigError::UnknownKey("list".into()))
        );
    }

    #[test]
    fn display_round_trips() {
        let mut c = KvConfig::new();
        c.set("x", 1.5);
        c.set("name", "abc");
        c.set("x", 2);
        let back = KvConfig::parse(&c.to_string()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.get("x"), Some("2"));
    }
}
