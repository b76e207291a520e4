//! Checkpoint format: magic `MRHPCKPT`, u32 version, u64 manifest length,
//! UTF-8 JSON manifest (parameter names/shapes/offsets, train config, model
//! dims, step count), then raw little-endian f64 blobs in manifest order.
//!
//! Loading and re-saving is byte-identical: the manifest is rebuilt from the
//! same structures with deterministic serialization.

use super::HarnessError;
use crate::config::TrainConfig;
use crate::model::{ModelDims, MrhpModel};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CKPT_MAGIC: &[u8; 8] = b"MRHPCKPT";
pub const CKPT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the blob section.
    offset: u64,
    /// Element count.
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    step: u64,
    config: TrainConfig,
    dims: ModelDims,
    params: Vec<ParamEntry>,
}

fn bad(path: &Path, reason: impl Into<String>) -> HarnessError {
    HarnessError::Checkpoint {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn io(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Serialize a trained model and its step counter.
pub fn save_checkpoint(model: &MrhpModel, step: u64, path: &Path) -> Result<(), HarnessError> {
    let mut entries = Vec::with_capacity(model.params.len());
    let mut offset = 0u64;
    for p in model.params.iter() {
        let len = p.value.numel() as u64;
        entries.push(ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset,
            len,
        });
        offset += len * 8;
    }
    let manifest = Manifest {
        version: CKPT_VERSION,
        step,
        config: model.config.clone(),
        dims: model.dims,
        params: entries,
    };
    let manifest_json = serde_json::to_vec(&manifest).expect("manifest serializes");

    let mut out = BufWriter::new(fs::File::create(path).map_err(|e| io(path, e))?);
    out.write_all(CKPT_MAGIC).map_err(|e| io(path, e))?;
    out.write_all(&CKPT_VERSION.to_le_bytes()).map_err(|e| io(path, e))?;
    out.write_all(&(manifest_json.len() as u64).to_le_bytes())
        .map_err(|e| io(path, e))?;
    out.write_all(&manifest_json).map_err(|e| io(path, e))?;
    for p in model.params.iter() {
        for &v in p.value.data() {
            out.write_all(&v.to_le_bytes()).map_err(|e| io(path, e))?;
        }
    }
    out.flush().map_err(|e| io(path, e))
}

/// Rebuild a model from a checkpoint. The parameter layout must match what
/// the stored config produces, name for name and shape for shape.
pub fn load_checkpoint(path: &Path) -> Result<(MrhpModel, u64), HarnessError> {
    let mut file = BufReader::new(fs::File::open(path).map_err(|e| io(path, e))?);
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic).map_err(|_| bad(path, "truncated header"))?;
    if &magic != CKPT_MAGIC {
        return Err(bad(path, "bad magic bytes (not a checkpoint)"));
    }
    let mut u32buf = [0u8; 4];
    file.read_exact(&mut u32buf).map_err(|_| bad(path, "truncated header"))?;
    let version = u32::from_le_bytes(u32buf);
    if version != CKPT_VERSION {
        return Err(bad(path, format!("unsupported version {version}")));
    }
    let mut u64buf = [0u8; 8];
    file.read_exact(&mut u64buf).map_err(|_| bad(path, "truncated header"))?;
    let manifest_len = u64::from_le_bytes(u64buf) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    file.read_exact(&mut manifest_bytes)
        .map_err(|_| bad(path, "truncated manifest"))?;
    let manifest: Manifest =
        serde_json::from_slice(&manifest_bytes).map_err(|e| bad(path, format!("manifest: {e}")))?;

    let mut model = MrhpModel::init(manifest.config.clone(), manifest.dims)
        .map_err(|e| bad(path, e.to_string()))?;
    if model.params.len() != manifest.params.len() {
        return Err(bad(
            path,
            format!(
                "parameter count mismatch: config rebuilds {}, checkpoint stores {}",
                model.params.len(),
                manifest.params.len()
            ),
        ));
    }

    let mut expected_offset = 0u64;
    for (param, entry) in model.params.iter_mut().zip(&manifest.params) {
        if param.name != entry.name {
            return Err(bad(
                path,
                format!("parameter order mismatch: {} vs {}", param.name, entry.name),
            ));
        }
        if param.value.shape() != entry.shape.as_slice() || param.value.numel() as u64 != entry.len {
            return Err(bad(path, format!("shape mismatch for {}", entry.name)));
        }
        if entry.offset != expected_offset {
            return Err(bad(path, format!("offset mismatch for {}", entry.name)));
        }
        expected_offset += entry.len * 8;
        let mut bytes = vec![0u8; entry.len as usize * 8];
        file.read_exact(&mut bytes)
            .map_err(|_| bad(path, format!("truncated blob for {}", entry.name)))?;
        for (slot, chunk) in param.value.data_mut().iter_mut().zip(bytes.chunks_exact(8)) {
            *slot = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    }
    let mut extra = [0u8; 1];
    if file.read(&mut extra).map_err(|e| io(path, e))? != 0 {
        return Err(bad(path, "trailing bytes after parameter blobs"));
    }
    Ok((model, manifest.step))
}
