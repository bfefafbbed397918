//! Run manifests: what a command read, wrote and how long it took.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub config: serde_json::Value,
    /// SHA-256 of every input and output data file, keyed by file name.
    pub dataset_hashes: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub checkpoints: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
}

pub fn file_hash(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            command: command.to_owned(),
            config,
            dataset_hashes: BTreeMap::new(),
            seed,
            checkpoints: Vec::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn hash(&mut self, path: &Path) -> anyhow::Result<()> {
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        self.dataset_hashes.insert(name, file_hash(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    pub fn checkpoint(&mut self, path: PathBuf) {
        self.checkpoints.push(path);
    }

    pub fn time(&mut self, phase: &str, seconds: f64) {
        self.timings.insert(phase.to_owned(), seconds);
    }

    /// Writes `manifest.json` into `dir` after checking every named file exists.
    pub fn write(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        for p in self.outputs.iter().chain(&self.checkpoints) {
            if !p.exists() {
                bail!("manifest names missing file {}", p.display());
            }
        }
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }
}
