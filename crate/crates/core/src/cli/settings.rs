//! Value resolution with precedence flags > config file > defaults.
//!
//! Config files are `key=value` lines; `#` starts a comment and dashes in
//! keys are read as underscores, so `in-frames=12` and `in_frames=12` are
//! the same setting.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

fn norm(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut file = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key=value, got {raw:?}", i + 1)))?;
            file.insert(norm(k), v.trim().to_string());
        }
        Ok(Settings {
            file,
            resolved: BTreeMap::new(),
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Settings::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    fn from_file<V: FromStr>(&self, key: &str) -> Result<Option<V>> {
        match self.file.get(key) {
            None => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("config value {key}={s:?} does not parse"))),
        }
    }

    pub fn optional<V: FromStr + Display>(&mut self, key: &str, flag: Option<V>) -> Result<Option<V>> {
        let v = match flag {
            Some(v) => Some(v),
            None => self.from_file(key)?,
        };
        match &v {
            Some(x) => self.resolved.insert(key.to_string(), x.to_string()),
            None => self.resolved.remove(key),
        };
        Ok(v)
    }

    pub fn value<V: FromStr + Display>(&mut self, key: &str, flag: Option<V>, default: V) -> Result<V> {
        let v = self.optional(key, flag)?.unwrap_or(default);
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// A switch: set by the flag, else by the file, else off.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool> {
        self.value(key, flag.then_some(true), false)
    }

    /// A required value; missing is a usage error.
    pub fn required<V: FromStr + Display>(&mut self, key: &str, flag: Option<V>) -> Result<V> {
        self.optional(key, flag)?
            .ok_or_else(|| Error::Usage(format!("--{} is required", key.replace('_', "-"))))
    }

    pub fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<Option<PathBuf>> {
        let s = flag.map(|p| p.to_string_lossy().into_owned());
        Ok(self.optional::<String>(key, s)?.map(PathBuf::from))
    }

    pub fn required_path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
        self.path(key, flag)?
            .ok_or_else(|| Error::Usage(format!("--{} is required", key.replace('_', "-"))))
    }

    /// Fails on config-file keys that no setting asked for.
    pub fn finish(&self) -> Result<()> {
        let unknown: Vec<&str> = self
            .file
            .keys()
            .filter(|k| !self.resolved.contains_key(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("unknown config keys: {}", unknown.join(", "))))
        }
    }

    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.resolved
    }
}

/// `x,y` pair of reals, as used by `--wind`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pair(pub f64, pub f64);

impl FromStr for Pair {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (a, b) = s.split_once(',').ok_or_else(|| format!("expected x,y, got {s:?}"))?;
        let p = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
        Ok(Pair(p(a)?, p(b)?))
    }
}

impl Display for Pair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{}", self.0, self.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let mut s = Settings::parse("seed = 5\nin-frames=12 # comment\n\nlr=0.01").unwrap();
        assert_eq!(s.value("seed", Some(9u64), 0).unwrap(), 9);
        assert_eq!(s.value("in_frames", None, 6usize).unwrap(), 12);
        assert_eq!(s.value("batch_size", None, 6usize).unwrap(), 6);
        assert!(matches!(s.finish(), Err(Error::Config(_))));
        s.value("lr", None, 1e-3f64).unwrap();
        s.finish().unwrap();
        assert_eq!(s.resolved()["seed"], "9");
    }

    #[test]
    fn missing_required_is_usage() {
        let mut s = Settings::default();
        assert!(matches!(s.required_path("out", None), Err(Error::Usage(_))));
        assert!(matches!(Settings::parse("nonsense"), Err(Error::Config(_))));
    }

    #[test]
    fn pair_round_trip() {
        let p: Pair = "1.5, -2".parse().unwrap();
        assert_eq!(p, Pair(1.5, -2.0));
        assert_eq!(p.to_string(), "1.5,-2");
    }
}
