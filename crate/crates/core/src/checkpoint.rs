//! Model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SPC3" | u16 version | u32 header length | header JSON | f64 blobs
//! ```
//!
//! The JSON header holds the model config, band and class counts, and a
//! manifest of every parameter tensor with its name, shape and byte offset
//! relative to the start of the blob section.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SPC3";
pub const VERSION: u16 = 1;
const PREAMBLE: usize = 4 + 2 + 4;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    n_bands: usize,
    n_classes: usize,
    parameters: Vec<ParamEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    bytes: u64,
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut parameters = Vec::new();
    let mut offset = 0u64;
    for (name, t) in model.parameters() {
        let bytes = (t.len() * 8) as u64;
        parameters.push(ParamEntry {
            name,
            shape: t.shape().to_vec(),
            offset,
            bytes,
        });
        offset += bytes;
    }
    let header = Header {
        config: model.config().clone(),
        n_bands: model.n_bands(),
        n_classes: model.n_classes(),
        parameters,
    };
    let json = serde_json::to_vec(&header).expect("header serialises");

    let mut out = Vec::with_capacity(PREAMBLE + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in model.parameters() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < PREAMBLE {
        return Err(Error::format(bytes.len() as u64, "file shorter than checkpoint preamble"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(0, "bad magic, expected SPC3"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let blob_start = PREAMBLE + header_len;
    if bytes.len() < blob_start {
        return Err(Error::format(
            bytes.len() as u64,
            format!("header of {header_len} bytes is truncated"),
        ));
    }
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..blob_start])
        .map_err(|e| Error::format(PREAMBLE as u64 + e.column() as u64, format!("header: {e}")))?;

    let blobs = &bytes[blob_start..];
    let mut params = Vec::with_capacity(header.parameters.len());
    let mut expected_offset = 0u64;
    for entry in &header.parameters {
        let at = blob_start as u64 + entry.offset;
        let count: usize = entry.shape.iter().product();
        if entry.offset != expected_offset || entry.bytes != count as u64 * 8 {
            return Err(Error::format(
                at,
                format!("parameter {} has an inconsistent manifest entry", entry.name),
            ));
        }
        let end = entry.offset + entry.bytes;
        if end > blobs.len() as u64 {
            return Err(Error::format(
                bytes.len() as u64,
                format!("parameter {} is truncated", entry.name),
            ));
        }
        let data = blobs[entry.offset as usize..end as usize]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::from_vec(&entry.shape, data)
            .map_err(|e| Error::format(at, format!("parameter {}: {e}", entry.name)))?;
        params.push(t);
        expected_offset = end;
    }
    if expected_offset != blobs.len() as u64 {
        return Err(Error::format(
            blob_start as u64 + expected_offset,
            "trailing bytes after the last parameter",
        ));
    }

    let model = Model::from_parameters(header.config, header.n_bands, header.n_classes, params)
        .map_err(|e| Error::format(PREAMBLE as u64, format!("shape table: {e}")))?;
    for ((name, _), entry) in model.parameters().iter().zip(&header.parameters) {
        if *name != entry.name {
            return Err(Error::format(
                blob_start as u64 + entry.offset,
                format!("expected parameter {name}, found {}", entry.name),
            ));
        }
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)).map_err(|e| Error::file(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    from_bytes(&bytes)
}
