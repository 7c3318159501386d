//! Model checkpoints: a JSON manifest next to one raw little-endian blob.

use std::fs;
use std::path::{Path, PathBuf};

use kanmix_core::{MixerConfig, Model, ModelKind, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub kind: ModelKind,
    pub config: MixerConfig,
    pub precision: String,
    pub seed: u64,
    /// File name of the blob, relative to the manifest.
    pub blob: String,
    pub params: Vec<ParamEntry>,
}

/// Writes `<stem>.json` and `<stem>.bin`; returns the manifest path.
pub fn save<S: Scalar>(model: &Model<S>, seed: u64, stem: &Path) -> Result<PathBuf> {
    let mut blob = Vec::with_capacity(model.count_params() * S::BYTES);
    let mut params = Vec::new();
    for (_, name, value) in model.params.iter() {
        params.push(ParamEntry { name: name.to_string(), shape: value.shape().to_vec(), offset: blob.len() });
        for &v in value.data() {
            v.write_le(&mut blob);
        }
    }
    let blob_path = stem.with_extension("bin");
    let manifest = CheckpointManifest {
        kind: model.kind,
        config: model.config.clone(),
        precision: S::NAME.to_string(),
        seed,
        blob: blob_path.file_name().expect("stem has a file name").to_string_lossy().into_owned(),
        params,
    };
    let json_path = stem.with_extension("json");
    fs::write(&blob_path, blob).map_err(|e| Error::io(&blob_path, e))?;
    crate::results::write_json(&json_path, &manifest)?;
    Ok(json_path)
}

/// Rebuilds the model described by a manifest and fills in its parameters.
pub fn load<S: Scalar>(manifest_path: &Path) -> Result<(Model<S>, CheckpointManifest)> {
    let manifest: CheckpointManifest = crate::results::read_json(manifest_path)?;
    if manifest.precision != S::NAME {
        return Err(Error::format(
            manifest_path,
            format!("checkpoint holds {} values, requested {}", manifest.precision, S::NAME),
        ));
    }
    let blob_path = manifest_path.parent().unwrap_or(Path::new(".")).join(&manifest.blob);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let mut model = Model::<S>::build(manifest.kind, &manifest.config, &mut ChaCha8Rng::seed_from_u64(0))?;
    let ids: Vec<_> = model.params.ids().collect();
    if ids.len() != manifest.params.len() {
        return Err(Error::format(manifest_path, "parameter list does not match the architecture"));
    }
    for (id, entry) in ids.into_iter().zip(&manifest.params) {
        if model.params.name(id) != entry.name || model.params.get(id).shape() != &entry.shape[..] {
            return Err(Error::format(manifest_path, format!("unexpected parameter {} {:?}", entry.name, entry.shape)));
        }
        let n = model.params.get(id).len();
        let bytes = blob
            .get(entry.offset..entry.offset + n * S::BYTES)
            .ok_or_else(|| Error::format(&blob_path, format!("blob too short for {}", entry.name)))?;
        for (dst, src) in model.params.get_mut(id).data_mut().iter_mut().zip(bytes.chunks_exact(S::BYTES)) {
            *dst = S::read_le(src);
        }
    }
    Ok((model, manifest))
}
