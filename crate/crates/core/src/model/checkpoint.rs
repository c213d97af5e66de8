//! Binary checkpoint format.
//!
//! ```text
//! "XFCK" | u32 LE version | u64 LE manifest length | UTF-8 JSON manifest |
//! f64 LE payload, tensors in manifest order
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{init_params, ModelConfig, Parameters};
use crate::numerics::RngState;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"XFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config: ModelConfig,
    /// SHA-256 of the vocabulary the model was trained with.
    pub vocab_hash: String,
    /// Free-form training provenance (init mode, seed, steps, parent, ...).
    pub provenance: serde_json::Value,
    /// Filled in on save.
    #[serde(default)]
    pub tensors: Vec<TensorEntry>,
}

impl CheckpointManifest {
    pub fn new(
        config: ModelConfig,
        vocab_hash: impl Into<String>,
        provenance: serde_json::Value,
    ) -> Self {
        Self {
            config,
            vocab_hash: vocab_hash.into(),
            provenance,
            tensors: Vec::new(),
        }
    }

    /// Fails unless `config` has the same encoder body as the checkpoint.
    pub fn check_compatible(&self, config: &ModelConfig) -> Result<()> {
        if self.config.same_body(config) {
            Ok(())
        } else {
            Err(Error::Compatibility(format!(
                "checkpoint has {:?}, model wants {:?}",
                self.config, config
            )))
        }
    }
}

/// Serializes `params` with `manifest`; the tensor table is rebuilt from
/// `params`.
pub fn write_checkpoint(params: &Parameters, manifest: &CheckpointManifest) -> Result<Vec<u8>> {
    let mut manifest = manifest.clone();
    manifest.tensors = params
        .named()
        .into_iter()
        .map(|(name, t)| TensorEntry {
            name,
            shape: t.shape().to_vec(),
        })
        .collect();
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * params.num_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in params.named() {
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<(Parameters, CheckpointManifest)> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic, not an XFCK checkpoint".into()));
    }
    if bytes.len() < 16 {
        return Err(Error::Corruption("truncated header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() < mlen {
        return Err(Error::Corruption("truncated manifest".into()));
    }
    let manifest: CheckpointManifest = serde_json::from_slice(&body[..mlen])
        .map_err(|e| Error::Corruption(format!("manifest: {e}")))?;
    manifest.config.validate()?;
    let payload = &body[mlen..];

    let mut params = init_params(&manifest.config, &RngState::new(0))?;
    let expected: usize = manifest
        .tensors
        .iter()
        .map(|e| e.shape.iter().product::<usize>())
        .sum();
    if payload.len() != 8 * expected {
        return Err(Error::Corruption(format!(
            "payload has {} bytes, manifest declares {}",
            payload.len(),
            8 * expected
        )));
    }
    let slots = params.named_mut();
    if slots.len() != manifest.tensors.len() {
        return Err(Error::Corruption(
            "tensor count disagrees with config".into(),
        ));
    }
    let mut off = 0;
    for ((name, t), entry) in slots.into_iter().zip(&manifest.tensors) {
        if name != entry.name || t.shape() != entry.shape.as_slice() {
            return Err(Error::Corruption(format!(
                "tensor {} {:?} where config expects {name} {:?}",
                entry.name,
                entry.shape,
                t.shape()
            )));
        }
        for x in t.data_mut() {
            *x = f64::from_le_bytes(payload[off..off + 8].try_into().unwrap());
            off += 8;
        }
    }
    Ok((params, manifest))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &Parameters,
    manifest: &CheckpointManifest,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_checkpoint(params, manifest)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Parameters, CheckpointManifest)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
