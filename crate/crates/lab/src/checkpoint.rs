//! Checkpoint files: a JSON document with the model config, seed, step and
//! metrics, and every parameter tensor as base64 of little-endian `f64`s.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use mess3_core::nn::{ModelConfig, ModelParams};
use mess3_core::train::Checkpoint;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

pub const FORMAT: &str = "mess3-checkpoint/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMetrics {
    pub train_loss: f64,
    pub probe_loss: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorBlob {
    pub shape: Vec<usize>,
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub format: String,
    pub config: ModelConfig,
    pub seed: u64,
    pub step: u64,
    pub metrics: CheckpointMetrics,
    pub tensors: BTreeMap<String, TensorBlob>,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(name: &str, text: &str) -> LabResult<Vec<f64>> {
    let bytes = STANDARD.decode(text).map_err(|e| LabError::format(format!("tensor {name}"), e))?;
    if bytes.len() % 8 != 0 {
        return Err(LabError::format(format!("tensor {name}"), "byte length is not a multiple of 8"));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

impl CheckpointFile {
    pub fn new(ck: &Checkpoint, seed: u64) -> Self {
        let p = &ck.params;
        let tensors = p
            .layout
            .tensors
            .iter()
            .map(|t| (t.name.clone(), TensorBlob { shape: t.shape.clone(), data: encode(&p.data[t.range()]) }))
            .collect();
        Self {
            format: FORMAT.into(),
            config: p.config,
            seed,
            step: ck.step,
            metrics: CheckpointMetrics { train_loss: ck.train_loss, probe_loss: ck.probe_loss, kl: ck.kl },
            tensors,
        }
    }

    /// Rebuilds the flat parameter buffer, checking every tensor against the
    /// layout of the stored config.
    pub fn params(&self) -> LabResult<ModelParams> {
        if self.format != FORMAT {
            return Err(LabError::format("checkpoint", format!("unknown format {:?}", self.format)));
        }
        let mut p = ModelParams::zeros(self.config)?;
        if self.tensors.len() != p.layout.tensors.len() {
            return Err(LabError::format(
                "checkpoint",
                format!("{} tensors, layout has {}", self.tensors.len(), p.layout.tensors.len()),
            ));
        }
        for spec in p.layout.tensors.clone() {
            let blob = self
                .tensors
                .get(&spec.name)
                .ok_or_else(|| LabError::format("checkpoint", format!("tensor {} is missing", spec.name)))?;
            if blob.shape != spec.shape {
                return Err(LabError::format(
                    "checkpoint",
                    format!("tensor {} has shape {:?}, expected {:?}", spec.name, blob.shape, spec.shape),
                ));
            }
            let values = decode(&spec.name, &blob.data)?;
            if values.len() != spec.len() {
                return Err(LabError::format("checkpoint", format!("tensor {} has {} values", spec.name, values.len())));
            }
            p.data[spec.range()].copy_from_slice(&values);
        }
        Ok(p)
    }

    pub fn to_json(&self) -> LabResult<String> {
        serde_json::to_string_pretty(self).map_err(|e| LabError::format("checkpoint", e))
    }

    pub fn from_json(text: &str) -> LabResult<Self> {
        serde_json::from_str(text).map_err(|e| LabError::format("checkpoint", e))
    }
}

pub fn save(path: &Path, ck: &Checkpoint, seed: u64) -> LabResult<()> {
    let text = CheckpointFile::new(ck, seed).to_json()?;
    std::fs::write(path, text).map_err(|e| LabError::io(path, e))
}

/// A missing file is reported as [`LabError::Missing`].
pub fn load(path: &Path) -> LabResult<(CheckpointFile, ModelParams)> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(LabError::Missing(path.to_path_buf())),
        Err(e) => return Err(LabError::io(path, e)),
    };
    let file = CheckpointFile::from_json(&text)?;
    let params = file.params()?;
    Ok((file, params))
}

pub fn file_name(step: u64) -> String {
    format!("step-{step}.ckpt")
}

/// Steps of every `step-<n>.ckpt` in `dir`, ascending.
pub fn list_steps(dir: &Path) -> LabResult<Vec<u64>> {
    let entries = match std::fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(LabError::Missing(dir.to_path_buf())),
        Err(e) => return Err(LabError::io(dir, e)),
    };
    let mut steps = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| LabError::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(n) = name.strip_prefix("step-").and_then(|r| r.strip_suffix(".ckpt")) {
            if let Ok(n) = n.parse() {
                steps.push(n);
            }
        }
    }
    steps.sort_unstable();
    Ok(steps)
}
