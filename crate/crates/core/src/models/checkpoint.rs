//! Model checkpoint file.
//!
//! Layout (little-endian): magic `HHHFLCK\0`, `u32` version, `u64` header
//! length, UTF-8 JSON header `{manifest, meta}`, then each component's flat
//! vector as raw `f64` in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{flatten_params, unflatten_params, FlatParams, Manifest, ModelParams};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HHHFLCK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Free-form metadata (e.g. round index and hyperparameters).
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    manifest: Manifest,
    meta: serde_json::Value,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let flat = flatten_params(&ck.params);
    let header = serde_json::to_vec(&Header {
        manifest: flat.manifest.clone(),
        meta: ck.meta.clone(),
    })
    .expect("header is plain data");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for comp in &flat.manifest.components {
        for v in &flat.vectors[&comp.name] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn ser(msg: &str) -> Error {
    Error::Serialization(msg.to_string())
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    if buf.len() < 20 || &buf[..8] != MAGIC {
        return Err(ser("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Serialization(format!("checkpoint version {version} unsupported")));
    }
    let hlen = u64::from_le_bytes(buf[12..20].try_into().expect("8 bytes"));
    let hend = usize::try_from(hlen)
        .ok()
        .and_then(|h| h.checked_add(20))
        .filter(|&e| e <= buf.len())
        .ok_or_else(|| ser("checkpoint header truncated"))?;
    let header: Header =
        serde_json::from_slice(&buf[20..hend]).map_err(|e| Error::Serialization(format!("checkpoint header: {e}")))?;
    let mut pos = hend;
    let mut vectors = std::collections::BTreeMap::new();
    for comp in &header.manifest.components {
        let n = comp.param_count();
        let end = n
            .checked_mul(8)
            .and_then(|b| b.checked_add(pos))
            .filter(|&e| e <= buf.len())
            .ok_or_else(|| ser("checkpoint payload truncated"))?;
        let v: Vec<f64> = buf[pos..end]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        pos = end;
        vectors.insert(comp.name.clone(), v);
    }
    if pos != buf.len() {
        return Err(ser("trailing bytes after checkpoint payload"));
    }
    let params = unflatten_params(&FlatParams {
        vectors,
        manifest: header.manifest,
    })?;
    Ok(Checkpoint {
        params,
        meta: header.meta,
    })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ck)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&buf)
}
