//! Output layout, input resolution and provenance sidecars.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use treecrop_core::rng;

use crate::config::Config;
use crate::error::{io_error, CliError};

pub const VERSION: &str = concat!("treecrop ", env!("CARGO_PKG_VERSION"));

/// Everything a command needs: the resolved config, its hash, the global
/// seed and the output root.
pub struct Ctx {
    pub cfg: Config,
    pub seed: u64,
    pub out: PathBuf,
    pub config_hash: String,
}

impl Ctx {
    pub fn new(cfg: Config) -> Result<Self, CliError> {
        let seed = cfg.seed()?;
        let out = cfg.out_dir();
        let config_hash = cfg.hash();
        Ok(Self { cfg, seed, out, config_hash })
    }

    /// Seed of one pipeline stage.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        rng::substream(self.seed, stage)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    /// Configured paths, or the synthetic defaults when none are set.
    pub fn inputs(&self, key: &str, default: impl Fn(&Ctx) -> Vec<PathBuf>) -> Vec<PathBuf> {
        let p = self.cfg.paths(key);
        if p.is_empty() {
            default(self)
        } else {
            p
        }
    }

    /// Records where `out` came from next to it as `<out>.prov.json`.
    pub fn provenance(&self, out: &Path, command: &str, inputs: &[PathBuf], extra: Value) -> Result<(), CliError> {
        let inputs = inputs
            .iter()
            .map(|p| {
                let bytes = fs::read(p).map_err(|e| io_error(p, e))?;
                Ok(json!({ "path": self.display(p), "sha256": hex::encode(Sha256::digest(&bytes)) }))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let mut doc = json!({
            "command": command,
            "version": VERSION,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "inputs": inputs,
        });
        if !extra.is_null() {
            doc["details"] = extra;
        }
        let text = serde_json::to_string_pretty(&doc).expect("provenance serializes");
        write_bytes(&sidecar(out), text.as_bytes())
    }

    /// Path as recorded in provenance: relative to the output root when
    /// inside it.
    pub fn display(&self, p: &Path) -> String {
        p.strip_prefix(&self.out).unwrap_or(p).display().to_string()
    }

    pub fn write_json<T: Serialize>(&self, out: &Path, value: &T, command: &str, inputs: &[PathBuf]) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).expect("report serializes");
        write_bytes(out, text.as_bytes())?;
        self.provenance(out, command, inputs, Value::Null)
    }

    /// `epoch,value` CSV of a per-epoch curve.
    pub fn write_curve(&self, out: &Path, values: &[f64], command: &str, inputs: &[PathBuf]) -> Result<(), CliError> {
        ensure_parent(out)?;
        let mut w = csv::Writer::from_path(out).map_err(|e| CliError::Input(format!("{}: {e}", out.display())))?;
        let csv_err = |e: csv::Error| CliError::Input(format!("{}: {e}", out.display()));
        w.write_record(["epoch", "value"]).map_err(csv_err)?;
        for (e, v) in values.iter().enumerate() {
            w.write_record([e.to_string(), v.to_string()]).map_err(csv_err)?;
        }
        w.flush().map_err(|e| io_error(out, e))?;
        self.provenance(out, command, inputs, Value::Null)
    }
}

pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".prov.json");
    PathBuf::from(s)
}

pub fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    Ok(())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

pub fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// File name without directory and without `.stack.rstk`/`.rstk`.
pub fn stem(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    for suffix in [".stack.rstk", ".rstk"] {
        if let Some(s) = name.strip_suffix(suffix) {
            return s.to_string();
        }
    }
    name
}

/// Fails with an input error naming the first missing path.
pub fn require(paths: &[PathBuf]) -> Result<(), CliError> {
    match paths.iter().find(|p| !p.exists()) {
        Some(p) => Err(CliError::Input(format!("missing input {}", p.display()))),
        None => Ok(()),
    }
}
