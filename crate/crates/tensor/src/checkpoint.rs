//! Parameter checkpoints: an 8-byte magic, a little-endian `u64` header
//! length, a JSON header, then the payload of little-endian `f32` values.
//!
//! The header lists every tensor's name, shape, byte offset and byte length
//! within the payload, plus a SHA-256 of the payload and free-form metadata.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"TPCKPT01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub length: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub dtype: String,
    pub payload_bytes: usize,
    pub sha256: String,
    pub tensors: Vec<TensorEntry>,
    pub metadata: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct Checkpoint<S> {
    pub metadata: serde_json::Value,
    pub tensors: Vec<(String, Tensor<S>)>,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode<S: Scalar>(metadata: &serde_json::Value, tensors: &[(&str, &Tensor<S>)]) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        let offset = payload.len();
        for v in t.values() {
            payload.extend_from_slice(&(v.to_acc() as f32).to_le_bytes());
        }
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
            length: payload.len() - offset,
        });
    }
    let header = CheckpointHeader {
        dtype: "f32-le".into(),
        payload_bytes: payload.len(),
        sha256: hex(&Sha256::digest(&payload)),
        tensors: entries,
        metadata: metadata.clone(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| TensorError::MalformedCheckpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode<S: Scalar>(bytes: &[u8]) -> Result<Checkpoint<S>> {
    let malformed = |m: &str| TensorError::MalformedCheckpoint(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(malformed("missing magic"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let payload_start = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| malformed("header length exceeds file"))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..payload_start])
        .map_err(|e| TensorError::MalformedCheckpoint(e.to_string()))?;
    let payload = &bytes[payload_start..];
    if header.dtype != "f32-le" {
        return Err(malformed("unsupported dtype"));
    }
    if payload.len() != header.payload_bytes {
        return Err(TensorError::ChecksumMismatch(format!(
            "header declares {} payload bytes, file holds {}",
            header.payload_bytes,
            payload.len()
        )));
    }
    let digest = hex(&Sha256::digest(payload));
    if digest != header.sha256 {
        return Err(TensorError::ChecksumMismatch(format!(
            "payload hash {digest} != header {}",
            header.sha256
        )));
    }
    let mut expected_offset = 0;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        let count: usize = e.shape.iter().product();
        if e.offset != expected_offset || e.length != count * 4 || e.offset + e.length > payload.len() {
            return Err(TensorError::ChecksumMismatch(format!(
                "entry `{}` (offset {}, length {}, shape {:?}) is inconsistent with the payload layout",
                e.name, e.offset, e.length, e.shape
            )));
        }
        let values = payload[e.offset..e.offset + e.length]
            .chunks_exact(4)
            .map(|c| S::from_acc(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        tensors.push((e.name.clone(), Tensor::new(e.shape.clone(), values)?));
        expected_offset += e.length;
    }
    if expected_offset != payload.len() {
        return Err(TensorError::ChecksumMismatch("payload has trailing bytes".into()));
    }
    Ok(Checkpoint {
        metadata: header.metadata,
        tensors,
    })
}

pub fn save<S: Scalar>(path: &Path, metadata: &serde_json::Value, tensors: &[(&str, &Tensor<S>)]) -> Result<()> {
    let bytes = encode(metadata, tensors)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load<S: Scalar>(path: &Path) -> Result<Checkpoint<S>> {
    decode(&fs::read(path)?)
}
