//! Line-oriented `key = value` configuration with `[section]` headers.
//!
//! Keys before the first header belong to the `general` section. `#`
//! starts a comment. Every key is addressed as `section.key`; unknown keys
//! are rejected so typos do not silently fall back to defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Every recognized key with its default value.
const DEFAULTS: &[(&str, &str)] = &[
    ("general.seed", "42"),
    ("general.out", "out"),
    ("synth.height", "256"),
    ("synth.width", "256"),
    ("synth.train_scenes", "4"),
    ("synth.years", "2"),
    ("synth.density_scenes", "3"),
    ("synth.field_size", "24"),
    ("synth.density_field_size", "64"),
    ("synth.noise", "0.015"),
    ("synth.mixture", "0.25, 0.35, 0.10, 0.30"),
    ("synth.high_density_fraction", "0.5"),
    ("synth.expansion_rate", "0.12"),
    ("synth.swap_rate", "0.08"),
    ("paths.train_stacks", ""),
    ("paths.train_labels", ""),
    ("paths.map_stacks", ""),
    ("paths.reference", ""),
    ("paths.density_stacks", ""),
    ("paths.density_truth", ""),
    ("paths.cluster_labels", ""),
    ("paths.builtup_mask", ""),
    ("paths.map_density_truth", ""),
    ("normalize.percentile_lo", "2"),
    ("normalize.percentile_hi", "98"),
    ("stca.mode", "multi_temporal"),
    ("stca.depth", "5"),
    ("stca.base_channels", "8"),
    ("stca.patch_size", "64"),
    ("stca.dropout", "0.3"),
    ("stca.runs", "10"),
    ("stca.lstm_hidden", "16"),
    ("stca.attention_dim", "16"),
    ("stca.epochs", "20"),
    ("stca.lr", "0.001"),
    ("stca.batch_size", "8"),
    ("stca.val_fraction", "0.1"),
    ("stca.patience", "5"),
    ("stca.erode", "false"),
    ("stca.erode_radius", "2"),
    ("stca.min_component", "30"),
    ("stca.stride", "32"),
    ("grow.seed_threshold", "0.8"),
    ("grow.neighbor_low", "0.4"),
    ("grow.connectivity", "8"),
    ("grow.persistence", "true"),
    ("grow.uncertainty_threshold", "none"),
    ("castc.depth", "5"),
    ("castc.base_channels", "8"),
    ("castc.patch_size", "32"),
    ("castc.embed_dim", "16"),
    ("castc.lstm_hidden", "16"),
    ("castc.attention_dim", "16"),
    ("castc.decoder_hidden", "32"),
    ("castc.pretrain_epochs", "15"),
    ("castc.pretrain_lr", "0.001"),
    ("castc.batch_size", "8"),
    ("castc.min_plantation", "0.5"),
    ("castc.k", "10"),
    ("castc.alpha", "1"),
    ("castc.refine_epochs", "10"),
    ("castc.refine_lr", "0.001"),
    ("density.uncounted", "error"),
    ("sample.cluster_size", "50"),
    ("sample.n_clusters", "120"),
    ("sample.allocation", "300, 200, 400, 100, 100, 100, 200"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
    /// Directory relative paths in the file are resolved against.
    base: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            base: PathBuf::from("."),
        }
    }
}

impl Config {
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg = Config { base: base.to_path_buf(), ..Config::default() };
        let mut section = String::from("general");
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| CliError::Config(format!("line {}: unterminated section header", n + 1)))?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(&format!("{section}.{}", k.trim()), v.trim())
                .map_err(|e| CliError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    /// Overrides one `section.key`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(CliError::Config(format!("unknown key {key}"))),
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("undeclared key {key}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse().map_err(|e| CliError::Config(format!("{key} = {raw:?}: {e}")))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|e| CliError::Config(format!("{key} entry {s:?}: {e}"))))
            .collect()
    }

    /// `None` for the literal `none`.
    pub fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if self.raw(key).eq_ignore_ascii_case("none") {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    /// Comma-separated paths, resolved against the config directory.
    pub fn paths(&self, key: &str) -> Vec<PathBuf> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| self.base.join(s))
            .collect()
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.paths(key).into_iter().next()
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.get("general.seed")
    }

    pub fn out_dir(&self) -> PathBuf {
        self.base.join(self.raw("general.out"))
    }

    /// Canonical `key=value` listing, one per line in key order. The
    /// output location is left out: it does not change any artifact.
    pub fn canonical(&self) -> String {
        self.values
            .iter()
            .filter(|(k, _)| k.as_str() != "general.out")
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// SHA-256 of the canonical listing.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}
