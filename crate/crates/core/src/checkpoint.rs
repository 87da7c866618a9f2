//! Model persistence: a directory holding `manifest.json` and `params.bin`.
//!
//! `params.bin` starts with the magic `DSTCKPT1` and a tensor count, then
//! per tensor: name length (u32), UTF-8 name, rank (u32), extents (u64
//! each) and the values as little-endian f64.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Ontology, Vocabulary};
use crate::error::{ModelError, Result};
use crate::model::{DstModel, ModelConfig};
use crate::tensor::{Role, Tensor};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";
const MAGIC: &[u8; 8] = b"DSTCKPT1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: Role,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ModelConfig,
    pub ontology_hash: String,
    pub catalog_fingerprint: String,
    pub tensors: Vec<TensorEntry>,
    pub ontology: Ontology,
    pub vocab: Vocabulary,
}

impl Manifest {
    pub fn of(model: &DstModel) -> Self {
        Self {
            config: model.config.clone(),
            ontology_hash: model.ontology.hash(),
            catalog_fingerprint: model.catalog.fingerprint(),
            tensors: model
                .store
                .iter()
                .map(|(_, p)| TensorEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    role: p.role,
                })
                .collect(),
            ontology: model.ontology.clone(),
            vocab: model.vocab.clone(),
        }
    }
}

fn fail(path: &Path, message: impl Into<String>) -> ModelError {
    ModelError::Checkpoint {
        path: path.display().to_string(),
        message: message.into(),
    }
}

pub fn encode_params(model: &DstModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(model.store.len() as u64).to_le_bytes());
    for (_, p) in model.store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &e in p.value.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

/// Parses a payload into `(name, tensor)` pairs in file order.
pub fn decode_params(bytes: &[u8]) -> std::result::Result<Vec<(String, Tensor)>, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()) != Some(&MAGIC[..]) {
        return Err("bad magic".into());
    }
    let truncated = || "truncated payload".to_string();
    let count = r.u64().ok_or_else(truncated)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u32().ok_or_else(truncated)? as usize;
        let name = std::str::from_utf8(r.take(len).ok_or_else(truncated)?)
            .map_err(|e| format!("tensor name is not UTF-8: {e}"))?
            .to_string();
        let rank = r.u32().ok_or_else(truncated)? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|e| e as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(truncated)?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .ok_or("shape overflows")?;
        if numel > (bytes.len() - r.pos) / 8 {
            return Err(truncated());
        }
        let data = (0..numel)
            .map(|_| r.f64())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(truncated)?;
        let tensor = Tensor::new(shape, data).map_err(|e| format!("{name}: {e}"))?;
        out.push((name, tensor));
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok(out)
}

pub fn save_checkpoint(model: &DstModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| fail(dir, e.to_string()))?;
    let manifest = serde_json::to_string_pretty(&Manifest::of(model)).expect("manifest serializes");
    let m = dir.join(MANIFEST_FILE);
    fs::write(&m, manifest + "\n").map_err(|e| fail(&m, e.to_string()))?;
    let p = dir.join(PARAMS_FILE);
    fs::write(&p, encode_params(model)).map_err(|e| fail(&p, e.to_string()))
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let m = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&m).map_err(|e| fail(&m, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| fail(&m, e.to_string()))
}

/// Rebuilds the model described by the manifest, installs the stored
/// values and re-derives the catalog, which must reproduce the recorded
/// fingerprint.
pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<DstModel> {
    let dir = dir.as_ref();
    let manifest = load_manifest(dir)?;
    if manifest.ontology.hash() != manifest.ontology_hash {
        return Err(fail(dir, "manifest ontology does not match its recorded hash"));
    }
    let p = dir.join(PARAMS_FILE);
    let bytes = fs::read(&p).map_err(|e| fail(&p, e.to_string()))?;
    let tensors = decode_params(&bytes).map_err(|e| fail(&p, e))?;

    let mut model = DstModel::new(
        manifest.config.clone(),
        manifest.ontology.clone(),
        manifest.vocab.clone(),
        0,
    )?;
    if tensors.len() != model.store.len() || manifest.tensors.len() != model.store.len() {
        return Err(fail(
            dir,
            format!(
                "expected {} tensors, manifest lists {} and payload holds {}",
                model.store.len(),
                manifest.tensors.len(),
                tensors.len()
            ),
        ));
    }
    for ((name, value), entry) in tensors.into_iter().zip(&manifest.tensors) {
        let id = model
            .store
            .id(&name)
            .ok_or_else(|| fail(&p, format!("unknown tensor {name}")))?;
        if entry.name != name || entry.shape != value.shape() || entry.role != model.store.get(id).role {
            return Err(fail(dir, format!("manifest and payload disagree on {name}")));
        }
        model.store.set_value(id, value)?;
    }
    model.refresh_catalog()?;
    let found = model.catalog.fingerprint();
    if found != manifest.catalog_fingerprint {
        return Err(fail(
            dir,
            format!(
                "catalog fingerprint {found} differs from recorded {}",
                manifest.catalog_fingerprint
            ),
        ));
    }
    Ok(model)
}
