//! Line-oriented configuration files and flag merging.
//!
//! The grammar is deliberately tiny: blank lines and `#` comments are
//! skipped, `[section]` opens a section, and `key=value` assigns inside
//! it (the full key is `section.key`). Values are raw strings; each
//! consumer parses its own type. Command-line flags always win over
//! file values, and defaults fill whatever remains. Every resolved
//! setting is recorded so run records can state the exact configuration
//! and hash it independently of key order.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::CliError;

/// Every key any subcommand understands. Parsing rejects others so a
/// typo fails loudly instead of silently using a default.
const KNOWN_KEYS: &[&str] = &[
    "data.kind",
    "data.path",
    "data.n",
    "data.alpha",
    "data.replicate",
    "data.variance_form",
    "data.n_val",
    "data.n_test",
    "data.subsample_treated",
    "train.objective",
    "train.epsilon",
    "train.epochs",
    "train.lr",
    "train.batch",
    "train.latent_dim",
    "train.hidden_layers",
    "train.hidden_units",
    "train.mc_samples",
    "train.elbo_samples",
    "train.seed",
    "sweep.objectives",
    "sweep.epsilons",
    "sweep.alphas",
    "sweep.ns",
    "sweep.replicates",
    "sweep.seeds",
    "sweep.workers",
    "out.dir",
];

#[derive(Clone, Debug, Default)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(inner) = line.strip_prefix('[') {
                let Some(name) = inner.strip_suffix(']') else {
                    return Err(CliError::Validation(format!("{origin}:{lineno}: unterminated section header")));
                };
                let name = name.trim();
                if name.is_empty() {
                    return Err(CliError::Validation(format!("{origin}:{lineno}: empty section name")));
                }
                section = name.to_string();
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Validation(format!(
                    "{origin}:{lineno}: expected `key=value` or `[section]`, found `{line}`"
                )));
            };
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(CliError::Validation(format!("{origin}:{lineno}: unknown setting `{key}`")));
            }
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(CliError::Validation(format!("{origin}:{lineno}: duplicate setting `{key}`")));
            }
        }
        Ok(ConfigMap { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }
}

/// Merges flag values, file values, and defaults, recording the final
/// value of every setting it touches.
pub struct Resolver {
    file: ConfigMap,
    resolved: BTreeMap<String, String>,
}

impl Resolver {
    pub fn new(file: ConfigMap) -> Self {
        Resolver { file, resolved: BTreeMap::new() }
    }

    fn parse_file_value<T>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| CliError::Validation(format!("setting `{key}`: cannot parse `{raw}`: {e}"))),
        }
    }

    /// Flag wins, then the config file, then the default.
    pub fn resolve<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => v,
            None => self.parse_file_value(key)?.unwrap_or(default),
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    /// As `resolve` but without a default; absent settings stay absent.
    pub fn resolve_opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => self.parse_file_value(key)?,
        };
        if let Some(v) = &value {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(value)
    }

    pub fn resolve_required<T>(&mut self, key: &str, flag: Option<T>, flag_name: &str) -> Result<T, CliError>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.resolve_opt(key, flag)?
            .ok_or_else(|| CliError::Validation(format!("missing required setting `{key}` (flag {flag_name})")))
    }

    /// Drop a recorded setting (used when a flag is ignored, so the
    /// record reflects what the run actually used).
    pub fn unset(&mut self, key: &str) {
        self.resolved.remove(key);
    }

    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.resolved
    }
}

/// SHA-256 over the sorted `key=value` lines of a resolved
/// configuration; independent of the order settings were given in.
pub fn config_hash(resolved: &BTreeMap<String, String>) -> String {
    let mut hasher = Sha256::new();
    for (k, v) in resolved {
        hasher.update(k.as_bytes());
        hasher.update(b"=");
        hasher.update(v.as_bytes());
        hasher.update(b"\n");
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
