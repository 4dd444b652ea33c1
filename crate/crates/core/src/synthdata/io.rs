//! Dataset directory layout:
//!
//! ```text
//! manifest.json   schema version, counts, shapes, seed, config hash, checksums
//! x.f32           N x 64 x 64 little-endian f32
//! y.u8            N x 3
//! subject.u32     N little-endian u32
//! effects.f32     3 x 61 x 61 little-endian f32
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};
use crate::labels::{LabelVector, N_LABELS};

use super::dataset::{Dataset, Manifest};
use super::signal::GroundTruthEffects;
use super::{CHANNELS, PADDED_SIDE};

pub const SCHEMA_VERSION: u32 = 1;

const X_FILE: &str = "x.f32";
const Y_FILE: &str = "y.u8";
const SUBJECT_FILE: &str = "subject.u32";
const EFFECTS_FILE: &str = "effects.f32";

fn sha(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn shapes(count: usize) -> [(&'static str, Vec<usize>); 4] {
    [
        (X_FILE, vec![count, PADDED_SIDE, PADDED_SIDE]),
        (Y_FILE, vec![count, N_LABELS]),
        (SUBJECT_FILE, vec![count]),
        (EFFECTS_FILE, vec![N_LABELS, CHANNELS, CHANNELS]),
    ]
}

fn element_size(file: &str) -> usize {
    match file {
        Y_FILE => 1,
        _ => 4,
    }
}

pub fn save_dataset(d: &Dataset, effects: &GroundTruthEffects, dir: &Path) -> Result<()> {
    if !d.consistent() {
        return Err(Error::Config("dataset arrays have inconsistent lengths".into()));
    }
    fs::create_dir_all(dir).at(dir)?;
    let x: Vec<u8> = d.x.iter().flat_map(|v| v.to_le_bytes()).collect();
    let y: Vec<u8> = d.labels.iter().flat_map(|l| l.bits()).collect();
    let s: Vec<u8> = d.subject_ids.iter().flat_map(|v| v.to_le_bytes()).collect();
    let e: Vec<u8> = effects.maps.iter().flatten().flat_map(|v| (*v as f32).to_le_bytes()).collect();
    let mut manifest = d.manifest.clone();
    manifest.schema_version = SCHEMA_VERSION;
    manifest.count = d.len();
    manifest.split = d.split;
    manifest.shapes = shapes(d.len()).into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    manifest.checksums.clear();
    for (name, bytes) in [(X_FILE, &x), (Y_FILE, &y), (SUBJECT_FILE, &s), (EFFECTS_FILE, &e)] {
        let path = dir.join(name);
        fs::write(&path, bytes).at(&path)?;
        manifest.checksums.insert(name.to_string(), sha(bytes));
    }
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).at(&path)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let bytes = fs::read(&path).at(&path)?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes).map_err(|e| Error::MalformedManifest { path: path.clone(), reason: e.to_string() })?;
    let malformed = |reason: String| Error::MalformedManifest { path: path.clone(), reason };
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(malformed(format!("unsupported schema version {}", manifest.schema_version)));
    }
    if manifest.channels != CHANNELS || manifest.side != PADDED_SIDE || manifest.labels != N_LABELS {
        return Err(malformed("unexpected channel/side/label counts".into()));
    }
    for (name, shape) in shapes(manifest.count) {
        match manifest.shapes.get(name) {
            Some(s) if *s == shape => {}
            Some(s) => return Err(malformed(format!("{name} shape {s:?} inconsistent with count {}", manifest.count))),
            None => return Err(malformed(format!("missing shape for {name}"))),
        }
        if !manifest.checksums.contains_key(name) {
            return Err(malformed(format!("missing checksum for {name}")));
        }
    }
    Ok(manifest)
}

fn read_array(dir: &Path, manifest: &Manifest, name: &str) -> Result<Vec<u8>> {
    let path = dir.join(name);
    let bytes = fs::read(&path).at(&path)?;
    let expected = manifest.shapes[name].iter().product::<usize>() * element_size(name);
    if bytes.len() != expected {
        return Err(Error::ShapeMismatch { path, expected, found: bytes.len() });
    }
    if sha(&bytes) != manifest.checksums[name] {
        return Err(Error::Checksum { path });
    }
    Ok(bytes)
}

fn f32s(bytes: &[u8]) -> impl Iterator<Item = f32> + '_ {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let x = f32s(&read_array(dir, &manifest, X_FILE)?).collect();
    let y = read_array(dir, &manifest, Y_FILE)?;
    let labels = y
        .chunks_exact(N_LABELS)
        .map(|c| LabelVector::from_bits([c[0], c[1], c[2]]))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::MalformedManifest { path: dir.join(Y_FILE), reason: e.to_string() })?;
    let subject_ids = read_array(dir, &manifest, SUBJECT_FILE)?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let split = manifest.split;
    Ok(Dataset { x, labels, subject_ids, split, manifest })
}

pub fn load_effects(dir: &Path) -> Result<GroundTruthEffects> {
    let manifest = read_manifest(dir)?;
    let values: Vec<f64> = f32s(&read_array(dir, &manifest, EFFECTS_FILE)?).map(|v| v as f64).collect();
    let cells = CHANNELS * CHANNELS;
    Ok(GroundTruthEffects { maps: std::array::from_fn(|i| values[i * cells..(i + 1) * cells].to_vec()) })
}
