//! Safetensors-layout checkpoint files.
//!
//! Layout: `u64` little-endian header length `N`, `N` bytes of JSON mapping
//! each tensor name to `{"dtype", "shape", "data_offsets"}` (plus an optional
//! `"__metadata__"` string map), then the raw little-endian byte buffer.
//! Offsets are relative to the start of the buffer.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Map, Value};

use super::{DType, Tensor, TensorMap};
use crate::error::{Error, Result};

const METADATA_KEY: &str = "__metadata__";
const HEADER_ALIGN: usize = 8;
const MAX_HEADER_LEN: u64 = 100 * 1024 * 1024;

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TensorMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    from_bytes(&bytes)
}

pub fn save_checkpoint(m: &TensorMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(m)).map_err(|e| Error::file(path, e))
}

/// Canonical encoding: tensors laid out in name order, header keys sorted,
/// header padded with spaces to a multiple of 8 bytes.
pub fn to_bytes(m: &TensorMap) -> Vec<u8> {
    let mut header = Map::new();
    if !m.metadata().is_empty() {
        let meta: Map<String, Value> = m
            .metadata()
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect();
        header.insert(METADATA_KEY.to_string(), Value::Object(meta));
    }
    let mut offset = 0usize;
    for (name, t) in m.tensors() {
        let end = offset + t.data().len();
        header.insert(
            name.clone(),
            json!({
                "dtype": t.dtype().name(),
                "shape": t.shape(),
                "data_offsets": [offset, end],
            }),
        );
        offset = end;
    }
    let mut header_bytes = serde_json::to_vec(&Value::Object(header)).expect("header serializes");
    let padded = header_bytes.len().div_ceil(HEADER_ALIGN) * HEADER_ALIGN;
    header_bytes.resize(padded, b' ');

    let mut out = Vec::with_capacity(8 + header_bytes.len() + offset);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for t in m.tensors().values() {
        out.extend_from_slice(t.data());
    }
    out
}

struct Entry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    start: usize,
    end: usize,
}

pub fn from_bytes(bytes: &[u8]) -> Result<TensorMap> {
    if bytes.len() < 8 {
        return Err(Error::TruncatedBuffer(format!(
            "{} bytes, need at least 8 for the header length",
            bytes.len()
        )));
    }
    let n = u64::from_le_bytes(bytes[..8].try_into().unwrap());
    if n > MAX_HEADER_LEN {
        return Err(Error::MalformedHeader(format!("header length {n} too large")));
    }
    let n = n as usize;
    if bytes.len() - 8 < n {
        return Err(Error::TruncatedBuffer(format!(
            "header declares {n} bytes, only {} present",
            bytes.len() - 8
        )));
    }
    let header: Value = serde_json::from_slice(&bytes[8..8 + n])
        .map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let Value::Object(header) = header else {
        return Err(Error::MalformedHeader("header is not a JSON object".into()));
    };
    let buffer = &bytes[8 + n..];

    let mut metadata = BTreeMap::new();
    let mut entries = Vec::with_capacity(header.len());
    for (name, info) in header {
        if name == METADATA_KEY {
            let Value::Object(meta) = info else {
                return Err(Error::MalformedHeader("__metadata__ is not an object".into()));
            };
            for (k, v) in meta {
                let Value::String(v) = v else {
                    return Err(Error::MalformedHeader(format!(
                        "metadata value for {k:?} is not a string"
                    )));
                };
                metadata.insert(k, v);
            }
            continue;
        }
        entries.push(parse_entry(name, &info)?);
    }

    for e in &entries {
        if e.end > buffer.len() {
            return Err(Error::TruncatedBuffer(format!(
                "tensor {:?} ends at {} but buffer holds {} bytes",
                e.name,
                e.end,
                buffer.len()
            )));
        }
    }
    let mut spans: Vec<&Entry> = entries.iter().filter(|e| e.end > e.start).collect();
    spans.sort_by_key(|e| (e.start, e.end));
    for pair in spans.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(Error::OverlappingTensors {
                first: pair[0].name.clone(),
                second: pair[1].name.clone(),
            });
        }
    }

    let mut m = TensorMap::new();
    for e in entries {
        let data = buffer[e.start..e.end].to_vec();
        m.insert(e.name, Tensor::new(e.dtype, e.shape, data)?);
    }
    *m.metadata_mut() = metadata;
    Ok(m)
}

fn parse_entry(name: String, info: &Value) -> Result<Entry> {
    let bad = |what: &str| Error::MalformedHeader(format!("tensor {name:?}: {what}"));
    let dtype = info
        .get("dtype")
        .and_then(Value::as_str)
        .ok_or_else(|| bad("missing dtype"))?;
    let dtype = DType::from_name(dtype)?;
    let shape = info
        .get("shape")
        .and_then(Value::as_array)
        .ok_or_else(|| bad("missing shape"))?
        .iter()
        .map(|d| d.as_u64().map(|d| d as usize).ok_or_else(|| bad("bad extent")))
        .collect::<Result<Vec<_>>>()?;
    let offsets = info
        .get("data_offsets")
        .and_then(Value::as_array)
        .filter(|o| o.len() == 2)
        .ok_or_else(|| bad("data_offsets must be [start, end]"))?;
    let start = offsets[0].as_u64().ok_or_else(|| bad("bad offset"))? as usize;
    let end = offsets[1].as_u64().ok_or_else(|| bad("bad offset"))? as usize;
    if end < start {
        return Err(bad("data_offsets end before start"));
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(dtype.size()))
        .ok_or_else(|| bad("shape overflows"))?;
    if end - start != numel {
        return Err(bad(&format!(
            "extent of {} bytes does not match shape {shape:?} ({numel} bytes)",
            end - start
        )));
    }
    Ok(Entry {
        name,
        dtype,
        shape,
        start,
        end,
    })
}
