//! Tensor container format: an 8-byte little-endian header length, a
//! JSON header mapping tensor names to dtype/shape/offsets (plus an
//! optional `__metadata__` string map), and a raw little-endian f32
//! payload. Byte-compatible with safetensors v0.x files holding F32
//! tensors. Files written here are canonical: `__metadata__` first,
//! then tensor names in sorted order with contiguous offsets, compact
//! JSON; save(load(f)) is byte-identical for such files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use kgpf_core::merge::{MergeError, Tensor, TensorBundle};

use crate::fsutil::write_atomic;

pub type Metadata = BTreeMap<String, String>;

#[derive(Debug, Error)]
pub enum TensorFileError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("file shorter than the 8-byte header length prefix")]
    MissingPrefix,
    #[error("header length exceeds file size")]
    HeaderOverrun,
    #[error("header is not valid JSON: {0}")]
    HeaderJson(String),
    #[error("header entry {name:?}: {message}")]
    BadEntry { name: String, message: String },
    #[error("unsupported dtype {dtype:?} for tensor {name:?} (only F32)")]
    UnsupportedDtype { name: String, dtype: String },
    #[error("payload shorter than header declares")]
    PayloadTooShort,
    #[error(transparent)]
    Bundle(#[from] MergeError),
}

#[derive(Debug, Deserialize)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

pub fn encode(bundle: &TensorBundle, metadata: Option<&Metadata>) -> Vec<u8> {
    let mut header = String::from("{");
    let mut first = true;
    if let Some(md) = metadata {
        header.push_str("\"__metadata__\":{");
        for (i, (key, value)) in md.iter().enumerate() {
            if i > 0 {
                header.push(',');
            }
            header.push_str(&serde_json::to_string(key).unwrap());
            header.push(':');
            header.push_str(&serde_json::to_string(value).unwrap());
        }
        header.push('}');
        first = false;
    }
    let mut offset = 0usize;
    let mut payload = Vec::new();
    for (name, tensor) in bundle.iter() {
        if !first {
            header.push(',');
        }
        first = false;
        let begin = offset;
        for value in &tensor.data {
            payload.extend_from_slice(&value.to_le_bytes());
        }
        offset += tensor.data.len() * 4;
        header.push_str(&serde_json::to_string(name).unwrap());
        header.push_str(":{\"dtype\":\"F32\",\"shape\":[");
        let dims: Vec<String> = tensor.shape.iter().map(|d| d.to_string()).collect();
        header.push_str(&dims.join(","));
        header.push_str("],\"data_offsets\":[");
        header.push_str(&begin.to_string());
        header.push(',');
        header.push_str(&offset.to_string());
        header.push_str("]}");
    }
    header.push('}');

    let mut out = Vec::with_capacity(8 + header.len() + payload.len());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&payload);
    out
}

pub fn decode(
    bytes: &[u8],
    allow_nonfinite: bool,
) -> Result<(TensorBundle, Option<Metadata>), TensorFileError> {
    if bytes.len() < 8 {
        return Err(TensorFileError::MissingPrefix);
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if header_len > body.len() {
        return Err(TensorFileError::HeaderOverrun);
    }
    let header_str = std::str::from_utf8(&body[..header_len])
        .map_err(|e| TensorFileError::HeaderJson(e.to_string()))?;
    let payload = &body[header_len..];

    let parsed: serde_json::Map<String, serde_json::Value> = serde_json::from_str(header_str)
        .map_err(|e| TensorFileError::HeaderJson(e.to_string()))?;

    let mut metadata = None;
    let mut bundle = TensorBundle::new();
    for (name, value) in parsed {
        if name == "__metadata__" {
            let md: Metadata =
                serde_json::from_value(value).map_err(|e| TensorFileError::BadEntry {
                    name,
                    message: e.to_string(),
                })?;
            metadata = Some(md);
            continue;
        }
        let entry: HeaderEntry =
            serde_json::from_value(value).map_err(|e| TensorFileError::BadEntry {
                name: name.clone(),
                message: e.to_string(),
            })?;
        if entry.dtype != "F32" {
            return Err(TensorFileError::UnsupportedDtype {
                name,
                dtype: entry.dtype,
            });
        }
        let [begin, end] = entry.data_offsets;
        let elements: usize = entry.shape.iter().product();
        if end < begin || end - begin != elements * 4 {
            return Err(TensorFileError::BadEntry {
                name,
                message: format!(
                    "data_offsets [{begin}, {end}] do not cover shape {:?}",
                    entry.shape
                ),
            });
        }
        if end > payload.len() {
            return Err(TensorFileError::PayloadTooShort);
        }
        let data: Vec<f32> = payload[begin..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let tensor = Tensor::new(entry.shape, data)?;
        bundle.insert(&name, tensor)?;
    }
    if !allow_nonfinite {
        bundle.validate_finite()?;
    }
    Ok((bundle, metadata))
}

pub fn save_bundle(
    path: &Path,
    bundle: &TensorBundle,
    metadata: Option<&Metadata>,
) -> Result<(), TensorFileError> {
    let bytes = encode(bundle, metadata);
    write_atomic(path, &bytes).map_err(|source| TensorFileError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_bundle(
    path: &Path,
    allow_nonfinite: bool,
) -> Result<(TensorBundle, Option<Metadata>), TensorFileError> {
    let bytes = std::fs::read(path).map_err(|source| TensorFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes, allow_nonfinite)
}
