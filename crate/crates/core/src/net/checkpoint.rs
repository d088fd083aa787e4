//! Checkpoint file layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "CSASRCKP"
//! version    u32
//! meta_len   u32, then meta_len bytes of JSON {model, features, vocabulary}
//! count      u32
//! count x { name_len u32, name bytes, ndim u32, ndim x u64 dims, f64 data }
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{tensor_specs, ModelConfig, ModelParams, NetError, Tensor};
use crate::features::FeatureParams;

const MAGIC: &[u8; 8] = b"CSASRCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Parameters together with everything needed to run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub features: FeatureParams,
    pub vocabulary: String,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    model: ModelConfig,
    features: FeatureParams,
    vocabulary: String,
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<(), NetError> {
    let meta = serde_json::to_vec(&Meta {
        model: ck.model.clone(),
        features: ck.features.clone(),
        vocabulary: ck.vocabulary.clone(),
    })
    .expect("checkpoint metadata serializes");
    let mut out = Vec::with_capacity(64 + meta.len() + ck.params.num_params() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(ck.params.tensors.len() as u32).to_le_bytes());
    for t in &ck.params.tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Loads a checkpoint and checks every tensor against the stored model
/// config, and against `expected` when given.
pub fn load_checkpoint(
    path: &Path,
    expected: Option<&ModelConfig>,
) -> Result<Checkpoint, NetError> {
    let bytes = fs::read(path)?;
    let bad = |reason: String| NetError::BadCheckpoint {
        path: path.display().to_string(),
        reason,
    };
    let truncated = || bad("truncated file".into());
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if c.take(8) != Some(MAGIC.as_slice()) {
        return Err(bad("not a checkpoint file".into()));
    }
    let version = c.u32().ok_or_else(truncated)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let meta_len = c.u32().ok_or_else(truncated)? as usize;
    let meta: Meta = serde_json::from_slice(c.take(meta_len).ok_or_else(truncated)?)
        .map_err(|e| bad(format!("metadata: {e}")))?;
    if let Some(exp) = expected {
        if exp != &meta.model {
            return Err(bad("model config differs from the expected one".into()));
        }
    }
    meta.model.validate()?;
    let specs = tensor_specs(&meta.model);
    let count = c.u32().ok_or_else(truncated)? as usize;
    if count != specs.len() {
        return Err(bad(format!(
            "{count} tensors, config needs {}",
            specs.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for spec in &specs {
        let name_len = c.u32().ok_or_else(truncated)? as usize;
        let name = String::from_utf8(c.take(name_len).ok_or_else(truncated)?.to_vec())
            .map_err(|_| bad("tensor name is not UTF-8".into()))?;
        let ndim = c.u32().ok_or_else(truncated)? as usize;
        let shape = (0..ndim)
            .map(|_| c.u64().map(|d| d as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(truncated)?;
        if name != spec.name || shape != spec.shape {
            return Err(bad(format!(
                "tensor {name} {shape:?} does not match expected {} {:?}",
                spec.name, spec.shape
            )));
        }
        let n: usize = shape.iter().product();
        let data = c
            .take(n * 8)
            .ok_or_else(truncated)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push(Tensor { name, shape, data });
    }
    if c.pos != bytes.len() {
        return Err(bad("trailing bytes after last tensor".into()));
    }
    Ok(Checkpoint {
        model: meta.model,
        features: meta.features,
        vocabulary: meta.vocabulary,
        params: ModelParams { tensors },
    })
}
