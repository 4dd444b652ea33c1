//! Checkpoint directory: `params.json` plus one little-endian `f32` file per
//! named parameter.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};

use super::arch::{Architecture, Framework};
use super::params::ModelParams;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub version: u32,
    pub framework: Framework,
    pub architecture: Architecture,
    pub architecture_hash: String,
    pub tensors: Vec<TensorEntry>,
}

fn f32_bytes(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn save_checkpoint(params: &ModelParams<f32>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let mut tensors = Vec::new();
    for (name, t) in params.named_tensors() {
        let file = format!("{name}.f32");
        let bytes = f32_bytes(&t.data);
        let path = dir.join(&file);
        fs::write(&path, &bytes).at(&path)?;
        tensors.push(TensorEntry { name, shape: t.shape.clone(), file, sha256: hex::encode(Sha256::digest(&bytes)) });
    }
    let meta = CheckpointMeta {
        version: CHECKPOINT_VERSION,
        framework: params.framework,
        architecture: params.arch.clone(),
        architecture_hash: params.architecture_hash(),
        tensors,
    };
    let path = dir.join("params.json");
    fs::write(&path, serde_json::to_vec_pretty(&meta)?).at(&path)?;
    Ok(())
}

pub fn read_meta(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join("params.json");
    let text = fs::read(&path).at(&path)?;
    serde_json::from_slice(&text).map_err(|e| Error::MalformedManifest { path, reason: e.to_string() })
}

pub fn load_checkpoint(dir: &Path) -> Result<ModelParams<f32>> {
    let meta = read_meta(dir)?;
    let mut params = ModelParams::<f32>::new(meta.framework, meta.architecture.clone(), 0)
        .map_err(|e| Error::Incompatible(e.to_string()))?;
    if params.architecture_hash() != meta.architecture_hash {
        return Err(Error::Incompatible(format!(
            "architecture hash {} does not match the {} layout",
            meta.architecture_hash, meta.framework
        )));
    }
    let expected: Vec<(String, Vec<usize>)> =
        params.named_tensors().into_iter().map(|(n, t)| (n, t.shape.clone())).collect();
    if expected.len() != meta.tensors.len() {
        return Err(Error::Incompatible(format!("expected {} tensors, found {}", expected.len(), meta.tensors.len())));
    }
    for ((name, shape), (entry, dst)) in expected.iter().zip(meta.tensors.iter().zip(params.tensors_mut())) {
        if *name != entry.name || *shape != entry.shape {
            return Err(Error::Incompatible(format!("tensor {} {:?} does not match {} {:?}", entry.name, entry.shape, name, shape)));
        }
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).at(&path)?;
        let n: usize = shape.iter().product();
        if bytes.len() != n * 4 {
            return Err(Error::ShapeMismatch { path, expected: n * 4, found: bytes.len() });
        }
        if hex::encode(Sha256::digest(&bytes)) != entry.sha256 {
            return Err(Error::Checksum { path });
        }
        dst.data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    }
    Ok(params)
}

/// Load and require a specific framework and architecture.
pub fn load_checkpoint_as(dir: &Path, framework: Framework, arch: &Architecture) -> Result<ModelParams<f32>> {
    let meta = read_meta(dir)?;
    if meta.framework != framework {
        return Err(Error::Incompatible(format!("checkpoint is {}, expected {}", meta.framework, framework)));
    }
    if meta.architecture != *arch {
        return Err(Error::Incompatible("checkpoint architecture differs from the requested one".into()));
    }
    load_checkpoint(dir)
}
