//! Configuration resolution: command-line flags override a `key = value`
//! config file, which overrides built-in defaults. The fully resolved
//! configuration is echoed into every output so any run can be reproduced
//! from its own metadata.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// `key = value` file contents; `#` starts a comment, blank lines ignored.
#[derive(Debug, Default, Clone)]
pub struct Resolver {
    map: BTreeMap<String, String>,
}

impl Resolver {
    pub fn from_path(path: Option<&Path>) -> Result<Resolver> {
        let mut map = BTreeMap::new();
        if let Some(path) = path {
            let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (lineno, raw) in content.lines().enumerate() {
                let line = match raw.find('#') {
                    Some(idx) => &raw[..idx],
                    None => raw,
                };
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Error::invalid(format!(
                        "{}:{}: expected 'key = value', got '{raw}'",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                map.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        Ok(Resolver { map })
    }

    fn parse_file_value<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.map.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| Error::invalid(format!("config key '{key}' = '{raw}': {e}"))),
            None => Ok(None),
        }
    }

    /// Flag value if given, else the file value if present.
    pub fn opt<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.parse_file_value(key),
        }
    }

    /// Flag, then file, then default.
    pub fn get<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }

    /// Raw string lookup (for list-valued keys parsed by the caller).
    pub fn raw(&self, flag: Option<String>, key: &str) -> Option<String> {
        flag.or_else(|| self.map.get(key).cloned())
    }
}

/// Create the output directory if needed.
pub fn ensure_out_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Pretty-printed JSON file with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| Error::invalid(format!("serialization failed: {e}")))?;
    fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
}

/// Compact single-line JSON for embedding into CSV comment headers.
pub fn compact_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).unwrap_or_else(|_| "{}".to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_fill_in_missing_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(&path, "b = 50\npi-thr = 0.8 # tighter\n\n# comment\n").unwrap();
        let r = Resolver::from_path(Some(&path)).unwrap();
        assert_eq!(r.get(None, "b", 100usize).unwrap(), 50);
        assert_eq!(r.get(Some(25usize), "b", 100).unwrap(), 25);
        assert_eq!(r.get(None::<f64>, "pi-thr", 0.7).unwrap(), 0.8);
        assert_eq!(r.get(None::<f64>, "fraction", 0.5).unwrap(), 0.5);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.conf");
        fs::write(&path, "just a line\n").unwrap();
        assert!(Resolver::from_path(Some(&path)).is_err());
    }

    #[test]
    fn bad_typed_value_is_reported_with_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("typed.conf");
        fs::write(&path, "m = lots\n").unwrap();
        let r = Resolver::from_path(Some(&path)).unwrap();
        let err = r.get(None::<usize>, "m", 10).unwrap_err();
        assert!(err.to_string().contains("'m'"));
    }
}
