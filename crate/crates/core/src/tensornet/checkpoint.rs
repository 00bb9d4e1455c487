//! Single-file model checkpoints.
//!
//! Layout: the 6-byte magic `WSNET1`, a little-endian `u32` header length, a
//! UTF-8 JSON header (layer specs, input shape, per-array shapes and free-form
//! metadata), then every array as raw little-endian `f64` values in header
//! order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerSpec, ModelGraph, NetError};

pub const MAGIC: &[u8; 6] = b"WSNET1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    arrays: Vec<Vec<usize>>,
    #[serde(default)]
    meta: serde_json::Value,
}

pub fn to_bytes(graph: &ModelGraph, meta: &serde_json::Value) -> Vec<u8> {
    let state = graph.state();
    let header = Header {
        input_shape: graph.input_shape().to_vec(),
        layers: graph.specs().to_vec(),
        arrays: state.iter().map(|(s, _)| s.clone()).collect(),
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let blob_len: usize = state.iter().map(|(_, v)| v.len() * 8).sum();
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + json.len() + blob_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, values) in &state {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<(ModelGraph, serde_json::Value), NetError> {
    let bad = |m: &str| NetError::Checkpoint(m.to_string());
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("missing WSNET1 magic"));
    }
    let len_bytes: [u8; 4] = bytes[6..10].try_into().expect("4 bytes");
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let header_end = 10usize
        .checked_add(header_len)
        .ok_or_else(|| bad("header length overflow"))?;
    if bytes.len() < header_end {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&bytes[10..header_end])
        .map_err(|e| NetError::Checkpoint(format!("header: {e}")))?;
    let mut blob = &bytes[header_end..];
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for shape in &header.arrays {
        let n: usize = shape.iter().product();
        if blob.len() < n * 8 {
            return Err(bad("truncated parameter blob"));
        }
        let values = blob[..n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        arrays.push(values);
        blob = &blob[n * 8..];
    }
    if !blob.is_empty() {
        return Err(bad("trailing bytes after parameter blob"));
    }
    let mut graph = ModelGraph::build(header.layers, header.input_shape, 0)?;
    graph.load_state(arrays)?;
    Ok((graph, header.meta))
}

pub fn save(path: &Path, graph: &ModelGraph, meta: &serde_json::Value) -> Result<(), NetError> {
    fs::write(path, to_bytes(graph, meta))
        .map_err(|e| NetError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<(ModelGraph, serde_json::Value), NetError> {
    let bytes =
        fs::read(path).map_err(|e| NetError::Checkpoint(format!("{}: {e}", path.display())))?;
    from_bytes(&bytes)
}

/// True when `bytes` starts with the checkpoint magic.
pub fn is_checkpoint(bytes: &[u8]) -> bool {
    bytes.starts_with(MAGIC)
}
