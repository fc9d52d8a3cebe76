//! Merge of command-line flags over a `key=value` config file.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use crate::{CliError, CliResult, Common};

/// Resolved option values; everything read is recorded for the run manifest.
pub struct Settings {
    file: BTreeMap<String, String>,
    common: Common,
    resolved: BTreeMap<String, String>,
}

/// Parse `key=value` lines. `#` starts a comment; keys may use `-` or `_`.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(format!("line {}: expected key=value", i + 1));
        };
        let key = k.trim().replace('-', "_");
        if key.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

impl Settings {
    pub fn load(common: &Common) -> CliResult<Self> {
        let file = match &common.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::BadArgs(format!("{}: {e}", p.display())))?;
                parse_config(&text).map_err(|e| CliError::BadArgs(format!("{}: {e}", p.display())))?
            }
            None => BTreeMap::new(),
        };
        let mut resolved = BTreeMap::new();
        if let Some(p) = &common.config {
            resolved.insert("config".to_string(), p.display().to_string());
        }
        Ok(Self {
            file,
            common: common.clone(),
            resolved,
        })
    }

    fn file_value<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        self.file
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::BadArgs(format!("config {key}={v}: {e}")))
            })
            .transpose()
    }

    pub fn get_opt<T: FromStr + Clone + ToDisplay>(&mut self, key: &str, cli: Option<T>) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        let v = match cli {
            Some(v) => Some(v),
            None => self.file_value(key)?,
        };
        if let Some(v) = &v {
            self.resolved.insert(key.to_string(), v.display_value());
        }
        Ok(v)
    }

    pub fn get<T: FromStr + Clone + ToDisplay>(&mut self, key: &str, cli: Option<T>, default: T) -> CliResult<T>
    where
        T::Err: Display,
    {
        let v = self.get_opt(key, cli)?.unwrap_or(default);
        self.resolved.insert(key.to_string(), v.display_value());
        Ok(v)
    }

    pub fn require<T: FromStr + Clone + ToDisplay>(&mut self, key: &str, cli: Option<T>) -> CliResult<T>
    where
        T::Err: Display,
    {
        self.get_opt(key, cli)?
            .ok_or_else(|| CliError::BadArgs(format!("missing required option --{}", key.replace('_', "-"))))
    }

    /// Boolean switch: set on the command line, or `key=true` in the file.
    pub fn get_flag(&mut self, key: &str, cli: bool) -> CliResult<bool> {
        let v = cli || self.file_value::<bool>(key)?.unwrap_or(false);
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    pub fn seed(&mut self) -> CliResult<u64> {
        let cli = self.common.seed;
        self.get("seed", cli, 0)
    }

    pub fn scale(&mut self) -> CliResult<f64> {
        let cli = self.common.scale;
        let s = self.get("scale", cli, 0.2)?;
        if !(s > 0.0 && s <= 1.0) {
            return Err(CliError::BadArgs(format!("--scale must lie in (0, 1], got {s}")));
        }
        Ok(s)
    }

    pub fn width(&mut self) -> CliResult<f64> {
        let cli = self.common.width;
        let m = self.get("width", cli, 0.25)?;
        if !(m > 0.0 && m <= 4.0) {
            return Err(CliError::BadArgs(format!("--width must lie in (0, 4], got {m}")));
        }
        Ok(m)
    }

    pub fn out(&mut self) -> CliResult<PathBuf> {
        let cli = self.common.out.clone();
        self.require("out", cli)
    }

    pub fn weights(&mut self) -> CliResult<PathBuf> {
        let cli = self.common.weights.clone();
        self.require("weights", cli)
    }

    /// Record a derived value (not an option) in the manifest.
    pub fn record(&mut self, key: &str, value: String) {
        self.resolved.insert(key.to_string(), value);
    }

    pub fn resolved(&self) -> &BTreeMap<String, String> {
        let _ = self.common.threads;
        &self.resolved
    }
}

/// String form written to the manifest.
pub trait ToDisplay {
    fn display_value(&self) -> String;
}

macro_rules! display_via_to_string {
    ($($t:ty),*) => {$(
        impl ToDisplay for $t {
            fn display_value(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

display_via_to_string!(u64, usize, f64, bool, String);

impl ToDisplay for PathBuf {
    fn display_value(&self) -> String {
        self.display().to_string()
    }
}
