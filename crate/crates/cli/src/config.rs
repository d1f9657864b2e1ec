//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys use the long
//! flag names with `-` or `_` (`calibration_len = 1440`). A flag given on
//! the command line wins over the file, which wins over the built-in
//! default.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{Context, Result};

use crate::UsageError;

#[derive(Clone, Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

/// Every key a configuration file may set.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "lm",
    "gm",
    "c",
    "heads",
    "hidden",
    "e0",
    "e1",
    "epochs",
    "batch_size",
    "lr",
    "weight_decay",
    "beta1",
    "beta2",
    "stride",
    "non_ev_cap",
    "q",
    "init_level",
    "refit_every",
    "max_peaks",
    "calibration_len",
    "days",
    "ev_power",
    "session_rate",
    "duration_min",
    "duration_max",
    "ev_free_minutes",
    "noise_std",
];

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(UsageError(format!(
                    "config line {}: expected key = value, got {raw:?}",
                    i + 1
                ))
                .into());
            };
            let key = k.trim().replace('-', "_");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(UsageError(format!(
                    "config line {}: unknown key {:?}",
                    i + 1,
                    k.trim()
                ))
                .into());
            }
            values.insert(key, v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| UsageError(format!("config key {key}: cannot parse {v:?}")).into()),
        }
    }

    /// `flag`, else the file's value, else `default`.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(match flag {
            Some(v) => v,
            None => self.get(key)?.unwrap_or(default),
        })
    }

    /// Like [`pick`](Self::pick) without a default.
    pub fn pick_opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        Ok(match flag {
            Some(v) => Some(v),
            None => self.get(key)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let f = ConfigFile::parse("# comment\nlm = 4\n\ncalibration-len=200\n").unwrap();
        assert_eq!(f.pick(None, "lm", 8usize).unwrap(), 4);
        assert_eq!(f.pick(Some(6), "lm", 8usize).unwrap(), 6);
        assert_eq!(f.pick(None, "gm", 32usize).unwrap(), 32);
        assert_eq!(f.pick(None, "calibration_len", 1440usize).unwrap(), 200);
        assert_eq!(f.pick_opt::<f64>(None, "q").unwrap(), None);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(ConfigFile::parse("lm 4\n").is_err());
        assert!(ConfigFile::parse("colour = red\n").is_err());
        let f = ConfigFile::parse("lm = four\n").unwrap();
        assert!(f.pick(None, "lm", 8usize).is_err());
    }
}
