//! Parameter checkpoints: a JSON manifest listing every tensor by name,
//! shape and byte offset into a single raw little-endian `f32` blob.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ssg_core::model::ModelConfig;
use ssg_core::trainer::AblationFlags;
use ssg_core::{ParameterStore, Tensor};

use crate::{read_bytes, read_text, write_bytes, Error, Result};

pub const DTYPE: &str = "f32";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    /// Object encoder parameters without the model prefix.
    Encoder,
    /// The full scene-graph model.
    SceneGraph,
}

/// What the tensors belong to, so a checkpoint can be used on its own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: CheckpointKind,
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flags: Option<AblationFlags>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    /// Blob file name, relative to the manifest's directory.
    pub blob: String,
    pub meta: CheckpointMeta,
    pub tensors: Vec<TensorEntry>,
}

/// Blob path for a manifest path: same stem, `.bin` extension.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Serializes `store` in name order. Values are narrowed to `f32`.
pub fn encode_checkpoint(store: &ParameterStore, meta: &CheckpointMeta, blob_name: &str) -> Result<(String, Vec<u8>)> {
    let mut blob = Vec::with_capacity(store.num_elements() * 4);
    let mut tensors = Vec::with_capacity(store.len());
    for (name, p) in store.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: p.value.shape().to_vec(),
            dtype: DTYPE.into(),
            offset: blob.len(),
        });
        for &x in p.value.data() {
            blob.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        blob: blob_name.into(),
        meta: meta.clone(),
        tensors,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::invalid(e.to_string()))?;
    Ok((json + "\n", blob))
}

pub fn decode_checkpoint(json: &str, blob: &[u8]) -> Result<(ParameterStore, CheckpointMeta)> {
    let manifest: CheckpointManifest =
        serde_json::from_str(json).map_err(|e| Error::invalid(format!("checkpoint manifest: {e}")))?;
    let mut store = ParameterStore::new();
    for t in &manifest.tensors {
        if t.dtype != DTYPE {
            return Err(Error::invalid(format!("tensor {}: unsupported dtype {}", t.name, t.dtype)));
        }
        let n: usize = t.shape.iter().product();
        let end = t.offset.checked_add(n * 4).filter(|&e| e <= blob.len());
        let Some(end) = end else {
            return Err(Error::invalid(format!("tensor {} runs past the end of the blob", t.name)));
        };
        let data = blob[t.offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        store.insert(&t.name, Tensor::new(t.shape.clone(), data)?)?;
    }
    Ok((store, manifest.meta))
}

/// Writes the manifest at `path` and the blob beside it.
pub fn save_checkpoint(path: &Path, store: &ParameterStore, meta: &CheckpointMeta) -> Result<()> {
    let blob_file = blob_path(path);
    let name = blob_file
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::invalid(format!("bad checkpoint path {}", path.display())))?;
    let (json, blob) = encode_checkpoint(store, meta, name)?;
    write_bytes(&blob_file, &blob)?;
    write_bytes(path, json.as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParameterStore, CheckpointMeta)> {
    let json = read_text(path)?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&json).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let blob = read_bytes(&path.with_file_name(&manifest.blob))?;
    decode_checkpoint(&json, &blob)
}
