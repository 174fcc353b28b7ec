//! `DSCKPT01` checkpoint files.
//!
//! Layout: the 8-byte magic, a single-line JSON header terminated by `\n`,
//! then the parameter buffer as little-endian `f32`. Byte offsets in the
//! header are relative to the start of the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetworkSpec, Params};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DSCKPT01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// `"diffusion"` or `"regression"`.
    pub kind: String,
    pub spec: NetworkSpec,
    pub layers: Vec<LayerEntry>,
    pub payload_bytes: usize,
    /// Model-specific settings (schedule, noise feature, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Params,
}

pub fn encode_checkpoint(params: &Params, kind: &str, meta: serde_json::Value) -> Result<Vec<u8>> {
    let spec = *params.spec();
    let mut layers = Vec::new();
    let mut at = 0;
    for (name, rows, cols) in spec.layout() {
        let bytes = rows * cols * 4;
        layers.push(LayerEntry {
            name,
            rows,
            cols,
            offset: at,
            bytes,
        });
        at += bytes;
    }
    let header = CheckpointHeader {
        kind: kind.to_string(),
        spec,
        layers,
        payload_bytes: at,
        meta,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len() + 1 + at);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&json);
    out.push(b'\n');
    for v in params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic { expected: "DSCKPT01" });
    }
    let rest = &bytes[8..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("checkpoint header is not terminated".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&rest[..nl])?;
    header.spec.validate()?;
    let expected = header.spec.num_params() * 4;
    if header.payload_bytes != expected {
        return Err(Error::Format(format!(
            "header payload size {} disagrees with spec ({expected})",
            header.payload_bytes
        )));
    }
    let payload = &rest[nl + 1..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::Format("trailing bytes after checkpoint payload".into()));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let params = Params::from_flat(header.spec, data)?;
    Ok(Checkpoint { header, params })
}

pub fn save_checkpoint(path: &Path, params: &Params, kind: &str, meta: serde_json::Value) -> Result<()> {
    fs::write(path, encode_checkpoint(params, kind, meta)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}
