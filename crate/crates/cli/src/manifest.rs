//! Run manifests: what was run, with which seeds, on which inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub master_seed: u64,
    /// Derived seed of every stochastic stage, by stage name.
    pub sub_seeds: BTreeMap<String, u64>,
    pub config: serde_json::Value,
    /// SHA-256 of each input file, by path as given.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of each output file, by name.
    pub outputs: BTreeMap<String, String>,
    pub status: String,
    /// Seconds since the Unix epoch.
    pub started: f64,
    pub finished: f64,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl RunManifest {
    pub fn start(subcommand: &str, master_seed: u64) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed,
            sub_seeds: BTreeMap::new(),
            config: serde_json::Value::Null,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            status: "running".into(),
            started: now(),
            finished: 0.0,
        }
    }

    pub fn input(&mut self, path: &Path, digest: &str) {
        self.inputs.insert(path.display().to_string(), digest.to_string());
    }

    pub fn seed(&mut self, stage: &str, seed: u64) {
        self.sub_seeds.insert(stage.to_string(), seed);
    }

    pub fn finish(&mut self, status: String) {
        self.status = status;
        self.finished = now();
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| CliError::io(path.display(), e))
    }

    pub fn read(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(path.display(), e))?;
        serde_json::from_str(&text).map_err(|e| CliError::io(path.display(), e))
    }
}
