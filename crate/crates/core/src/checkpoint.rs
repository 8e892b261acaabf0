//! On-disk checkpoints: a directory holding `manifest.json` and one flat
//! little-endian `f64` file per parameter.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE: &str = "f64le";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: String,
    pub step: u64,
    pub seed: u64,
    pub params: Vec<ParamEntry>,
    /// Free-form metadata owned by the caller (model configuration etc.).
    #[serde(default)]
    pub extra: serde_json::Value,
}

fn file_name(name: &str) -> String {
    let safe: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.bin")
}

pub fn save(
    dir: &Path,
    store: &ParamStore,
    seed: u64,
    extra: serde_json::Value,
) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(store.len());
    for p in store.params() {
        let file = file_name(&p.name);
        let mut bytes = Vec::with_capacity(p.value.len() * 8);
        for v in p.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            file,
            trainable: p.trainable,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dtype: DTYPE.to_string(),
        step: store.step,
        seed,
        params: entries,
        extra,
    };
    let path = dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    if manifest.dtype != DTYPE {
        return Err(Error::Checkpoint(format!(
            "unsupported dtype {:?}",
            manifest.dtype
        )));
    }
    Ok(manifest)
}

/// Loads parameter values; optimizer moments start from zero.
pub fn load(dir: &Path) -> Result<(ParamStore, Manifest)> {
    let manifest = read_manifest(dir)?;
    let mut store = ParamStore::new();
    for entry in &manifest.params {
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Checkpoint(format!(
                "{}: truncated data",
                path.display()
            )));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let tensor = Tensor::new(entry.shape.clone(), data)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", entry.name)))?;
        let id = store.add(&entry.name, tensor)?;
        store.set_trainable(id, entry.trainable);
    }
    store.step = manifest.step;
    Ok((store, manifest))
}
