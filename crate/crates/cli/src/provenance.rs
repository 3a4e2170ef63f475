use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const RUN_FILE: &str = "run.json";

/// Everything needed to repeat a run: resolved configuration, seed, tool
/// versions and digests of the files read and written.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub subcommand: String,
    pub versions: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub config: BTreeMap<String, Value>,
    pub config_digest: String,
    pub threads: usize,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub struct Run {
    subcommand: &'static str,
    seed: Option<u64>,
    config: BTreeMap<String, Value>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    pub fn new(subcommand: &'static str, config: BTreeMap<String, Value>, seed: Option<u64>) -> Self {
        Run {
            subcommand,
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: impl Into<PathBuf>) {
        self.inputs.push(path.into());
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    /// Write `run.json` into `dir`.
    pub fn write(self, dir: &Path) -> Result<RunRecord> {
        let digests = |paths: &[PathBuf]| -> Result<BTreeMap<String, String>> {
            paths
                .iter()
                .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
                .collect()
        };
        let config_digest = hex::encode(Sha256::digest(serde_json::to_vec(&self.config)?));
        let versions = BTreeMap::from([
            ("clickmil".to_string(), clickmil::VERSION.to_string()),
            ("clickmil-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ]);
        let record = RunRecord {
            schema_version: 1,
            subcommand: self.subcommand.to_string(),
            versions,
            seed: self.seed,
            config: self.config,
            config_digest,
            threads: rayon::current_num_threads(),
            inputs: digests(&self.inputs)?,
            outputs: digests(&self.outputs)?,
        };
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        clickmil::datastore::write_json(&dir.join(RUN_FILE), &record)?;
        Ok(record)
    }
}
