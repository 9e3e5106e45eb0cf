//! The `manifest.json` every command leaves in its output directory.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, LabResult};

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` overrides the clock.
    pub created_unix: u64,
    pub seed: u64,
    pub config: serde_json::Value,
    pub notes: Vec<String>,
    /// SHA-256 of each file read, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of each output, keyed by path relative to the directory.
    pub outputs: BTreeMap<String, String>,
}

fn now() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return t;
    }
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn digest_file(path: &Path) -> LabResult<String> {
    let bytes = std::fs::read(path).map_err(|e| LabError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: &impl Serialize) -> LabResult<Self> {
        Ok(Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            created_unix: now(),
            seed,
            config: serde_json::to_value(config).map_err(|e| LabError::format("manifest config", e))?,
            notes: Vec::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        })
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    /// Hashes `dir/rel` as it is now.
    pub fn record(&mut self, dir: &Path, rel: &str) -> LabResult<()> {
        let digest = digest_file(&dir.join(rel))?;
        self.outputs.insert(rel.replace('\\', "/"), digest);
        Ok(())
    }

    pub fn record_input(&mut self, path: &Path) -> LabResult<()> {
        let digest = digest_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> LabResult<()> {
        let path = dir.join(FILE_NAME);
        let text = serde_json::to_string_pretty(self).map_err(|e| LabError::format("manifest", e))?;
        std::fs::write(&path, text + "\n").map_err(|e| LabError::io(path, e))
    }

    pub fn read(dir: &Path) -> LabResult<Self> {
        let path = dir.join(FILE_NAME);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(LabError::Missing(path)),
            Err(e) => return Err(LabError::io(path, e)),
        };
        serde_json::from_str(&text).map_err(|e| LabError::format("manifest", e))
    }

    /// Outputs whose current digest differs from the recorded one.
    pub fn mismatches(&self, dir: &Path) -> LabResult<Vec<String>> {
        let mut bad = Vec::new();
        for (rel, digest) in &self.outputs {
            if &digest_file(&dir.join(rel))? != digest {
                bad.push(rel.clone());
            }
        }
        Ok(bad)
    }
}
