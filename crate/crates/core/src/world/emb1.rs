//! EMB1 embedding files.
//!
//! Binary layout (all little-endian): magic `EMB1`, `u32` dim, `u64` count,
//! then `count × dim` `f32`. Row metadata lives in a JSON-lines sidecar next
//! to the binary (same stem, `.jsonl` extension), one object per row in the
//! same order.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";
const HEADER_LEN: usize = 4 + 4 + 8;

/// One sidecar row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genre: Option<usize>,
    /// Paired catalog item, for query rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_id: Option<String>,
    /// Genres the query was built from, for query rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<usize>>,
}

impl EmbeddingRecord {
    pub fn new(id: impl Into<String>, genre: Option<usize>) -> Self {
        Self {
            id: id.into(),
            genre,
            target_id: None,
            support: None,
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("jsonl")
}

pub fn encode_emb1(dim: usize, vectors: &[Vec<f32>]) -> Result<Vec<u8>> {
    let dim32 = u32::try_from(dim).map_err(|_| Error::Format(format!("dimension {dim} does not fit in u32")))?;
    for v in vectors {
        if v.len() != dim {
            return Err(Error::dims("EMB1 row", dim, v.len()));
        }
    }
    let mut out = Vec::with_capacity(HEADER_LEN + vectors.len() * dim * 4);
    out.extend_from_slice(EMB1_MAGIC);
    out.extend_from_slice(&dim32.to_le_bytes());
    out.extend_from_slice(&(vectors.len() as u64).to_le_bytes());
    for v in vectors {
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decode an EMB1 buffer into `(dim, rows)`.
pub fn decode_emb1(bytes: &[u8]) -> Result<(usize, Vec<Vec<f32>>)> {
    if bytes.len() < 4 || &bytes[..4] != EMB1_MAGIC {
        return Err(Error::BadMagic { expected: "EMB1" });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let expected = (count as u128) * (dim as u128) * 4;
    let payload = &bytes[HEADER_LEN..];
    if (payload.len() as u128) < expected {
        return Err(Error::TruncatedPayload {
            expected: expected.min(usize::MAX as u128) as usize,
            found: payload.len(),
        });
    }
    if (payload.len() as u128) > expected {
        return Err(Error::Format("trailing bytes after EMB1 payload".into()));
    }
    let mut rows = Vec::with_capacity(count as usize);
    if dim > 0 {
        for chunk in payload.chunks_exact(dim * 4) {
            rows.push(
                chunk
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            );
        }
    } else {
        rows.resize(count as usize, Vec::new());
    }
    Ok((dim, rows))
}

/// Write the binary file and its sidecar.
pub fn save_embeddings(path: &Path, dim: usize, vectors: &[Vec<f32>], records: &[EmbeddingRecord]) -> Result<()> {
    if vectors.len() != records.len() {
        return Err(Error::Format(format!(
            "{} vectors but {} sidecar records",
            vectors.len(),
            records.len()
        )));
    }
    let bytes = encode_emb1(dim, vectors)?;
    fs::write(path, bytes)?;
    let mut side = fs::File::create(sidecar_path(path))?;
    for r in records {
        serde_json::to_writer(&mut side, r)?;
        side.write_all(b"\n")?;
    }
    Ok(())
}

/// Read the binary file and its sidecar.
pub fn load_embeddings(path: &Path) -> Result<(usize, Vec<Vec<f32>>, Vec<EmbeddingRecord>)> {
    let (dim, vectors) = decode_emb1(&fs::read(path)?)?;
    let side = fs::File::open(sidecar_path(path))?;
    let mut records = Vec::with_capacity(vectors.len());
    for line in BufReader::new(side).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    if records.len() != vectors.len() {
        return Err(Error::Format(format!(
            "sidecar has {} rows, binary has {}",
            records.len(),
            vectors.len()
        )));
    }
    Ok((dim, vectors, records))
}

/// Like [`load_embeddings`] but rejects files whose dimension differs from `dim`.
pub fn load_embeddings_with_dim(path: &Path, dim: usize) -> Result<(Vec<Vec<f32>>, Vec<EmbeddingRecord>)> {
    let (d, v, r) = load_embeddings(path)?;
    if d != dim {
        return Err(Error::dims("EMB1 file dimension", dim, d));
    }
    Ok((v, r))
}
