//! Line-oriented `section.key = value` documents used by profile, scenario
//! and expected-value files.
//!
//! `#` starts a comment, blank lines are ignored, keys may repeat only if the
//! caller reads them as lists. Every accessor records the key as consumed so
//! that leftover keys can be reported as schema violations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::sim::SimDuration;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KvError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("{field}: missing")]
    Missing { field: String },
    #[error("{field} (line {line}): {message}")]
    Invalid {
        field: String,
        line: usize,
        message: String,
    },
    #[error("{field} (line {line}): unknown key")]
    Unknown { field: String, line: usize },
}

impl KvError {
    /// Dotted key the error refers to, if any.
    pub fn field(&self) -> Option<&str> {
        match self {
            KvError::Missing { field } | KvError::Invalid { field, .. } | KvError::Unknown { field, .. } => Some(field),
            KvError::Duplicate { key, .. } => Some(key),
            KvError::Syntax { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, Default)]
pub struct KvDoc {
    entries: BTreeMap<String, Entry>,
    used: BTreeSet<String>,
}

/// Strips a trailing comment that is not inside double quotes.
fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

impl KvDoc {
    pub fn parse(text: &str) -> Result<Self, KvError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = strip_comment(raw).trim();
            if body.is_empty() {
                continue;
            }
            let Some((k, v)) = body.split_once('=') else {
                return Err(KvError::Syntax {
                    line,
                    text: raw.to_string(),
                });
            };
            let key = k.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(KvError::Syntax {
                    line,
                    text: raw.to_string(),
                });
            }
            let entry = Entry {
                value: v.trim().to_string(),
                line,
            };
            if entries.insert(key.to_string(), entry).is_some() {
                return Err(KvError::Duplicate {
                    line,
                    key: key.to_string(),
                });
            }
        }
        Ok(KvDoc {
            entries,
            used: BTreeSet::new(),
        })
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key)
    }

    fn entry(&mut self, key: &str) -> Option<Entry> {
        let e = self.entries.get(key).cloned();
        if e.is_some() {
            self.used.insert(key.to_string());
        }
        e
    }

    fn invalid(key: &str, e: &Entry, message: impl fmt::Display) -> KvError {
        KvError::Invalid {
            field: key.to_string(),
            line: e.line,
            message: message.to_string(),
        }
    }

    pub fn opt_str(&mut self, key: &str) -> Option<String> {
        self.entry(key).map(|e| e.value)
    }

    pub fn str(&mut self, key: &str) -> Result<String, KvError> {
        self.opt_str(key)
            .ok_or_else(|| KvError::Missing { field: key.to_string() })
    }

    /// Parses with `FromStr`, reporting failures against the key.
    pub fn opt_parse<T>(&mut self, key: &str) -> Result<Option<T>, KvError>
    where
        T: std::str::FromStr,
        T::Err: fmt::Display,
    {
        match self.entry(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse::<T>()
                .map(Some)
                .map_err(|err| Self::invalid(key, &e, err)),
        }
    }

    pub fn parse_as<T>(&mut self, key: &str) -> Result<T, KvError>
    where
        T: std::str::FromStr,
        T::Err: fmt::Display,
    {
        self.opt_parse(key)?
            .ok_or_else(|| KvError::Missing { field: key.to_string() })
    }

    pub fn opt_f64(&mut self, key: &str) -> Result<Option<f64>, KvError> {
        let Some(e) = self.entry(key) else { return Ok(None) };
        let v: f64 = e.value.parse().map_err(|err| Self::invalid(key, &e, err))?;
        if !v.is_finite() {
            return Err(Self::invalid(key, &e, "must be finite"));
        }
        Ok(Some(v))
    }

    pub fn f64(&mut self, key: &str) -> Result<f64, KvError> {
        self.opt_f64(key)?
            .ok_or_else(|| KvError::Missing { field: key.to_string() })
    }

    /// Non-negative real.
    pub fn non_negative(&mut self, key: &str) -> Result<f64, KvError> {
        let v = self.f64(key)?;
        if v < 0.0 {
            let e = self.entries[key].clone();
            return Err(Self::invalid(key, &e, "must be non-negative"));
        }
        Ok(v)
    }

    /// Strictly positive real.
    pub fn positive(&mut self, key: &str) -> Result<f64, KvError> {
        let v = self.f64(key)?;
        if v <= 0.0 {
            let e = self.entries[key].clone();
            return Err(Self::invalid(key, &e, "must be positive"));
        }
        Ok(v)
    }

    pub fn u64(&mut self, key: &str) -> Result<u64, KvError> {
        self.parse_as(key)
    }

    pub fn bool(&mut self, key: &str) -> Result<bool, KvError> {
        self.parse_as(key)
    }

    /// Seconds (`_s` keys) to microseconds, rounding to nearest.
    pub fn seconds(&mut self, key: &str) -> Result<SimDuration, KvError> {
        let v = self.non_negative(key)?;
        let e = self.entries[key].clone();
        SimDuration::try_from_secs_f64(v).map_err(|err| Self::invalid(key, &e, err))
    }

    pub fn opt_seconds(&mut self, key: &str) -> Result<Option<SimDuration>, KvError> {
        if self.contains(key) {
            self.seconds(key).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Decimal megabytes (`_mb`) to bytes.
    pub fn megabytes(&mut self, key: &str) -> Result<u64, KvError> {
        Ok((self.non_negative(key)? * 1e6).round() as u64)
    }

    /// Decimal gigabytes (`_gb`) to bytes.
    pub fn gigabytes(&mut self, key: &str) -> Result<u64, KvError> {
        Ok((self.non_negative(key)? * 1e9).round() as u64)
    }

    /// Comma-separated list.
    pub fn list(&mut self, key: &str) -> Option<Vec<String>> {
        self.entry(key).map(|e| {
            e.value
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        })
    }

    /// Fails on the first key never read.
    pub fn finish(&self) -> Result<(), KvError> {
        match self.entries.iter().find(|(k, _)| !self.used.contains(*k)) {
            Some((k, e)) => Err(KvError::Unknown {
                field: k.clone(),
                line: e.line,
            }),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_units() {
        let mut d = KvDoc::parse(
            "# header\n\
             a.b_s = 1.5   # trailing\n\
             a.size_mb = 173\n\
             a.note = \"x # not a comment\"\n\
             a.list = 1, 2 ,3\n",
        )
        .unwrap();
        assert_eq!(d.seconds("a.b_s").unwrap(), SimDuration::from_millis(1500));
        assert_eq!(d.megabytes("a.size_mb").unwrap(), 173_000_000);
        assert_eq!(d.str("a.note").unwrap(), "\"x # not a comment\"");
        assert_eq!(d.list("a.list").unwrap(), vec!["1", "2", "3"]);
        d.finish().unwrap();
    }

    #[test]
    fn errors_carry_field_paths() {
        assert_eq!(
            KvDoc::parse("a = 1\na = 2").unwrap_err(),
            KvError::Duplicate {
                line: 2,
                key: "a".into()
            }
        );
        assert!(matches!(KvDoc::parse("novalue"), Err(KvError::Syntax { line: 1, .. })));
        let mut d = KvDoc::parse("x.rate = -1\nx.extra = 0").unwrap();
        let e = d.positive("x.rate").unwrap_err();
        assert_eq!(e.field(), Some("x.rate"));
        assert_eq!(d.f64("x.missing").unwrap_err().field(), Some("x.missing"));
        assert_eq!(d.finish().unwrap_err().field(), Some("x.extra"));
    }
}
