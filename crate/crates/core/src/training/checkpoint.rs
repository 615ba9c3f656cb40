use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelConfig, ModelParams};
use crate::numeric::{ParameterSet, Tensor};
use crate::text::Vocabulary;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MSUMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CheckpointError {
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptPayload(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Trained parameters with everything needed to decode.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocabulary: Vocabulary,
    pub params: ModelParams<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    vocabulary: Vocabulary,
    manifest: Vec<ManifestEntry>,
}

fn manifest(config: &ModelConfig) -> Vec<ManifestEntry> {
    let mut offset = 0;
    ModelParams::<f32>::manifest_for(config)
        .into_iter()
        .map(|spec| {
            let entry = ManifestEntry {
                offset,
                name: spec.name,
                shape: spec.shape,
            };
            offset += entry.shape.iter().product::<usize>() * 4;
            entry
        })
        .collect()
}

fn corrupt(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::CorruptPayload(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            vocabulary: self.vocabulary.clone(),
            manifest: manifest(&self.config),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let payload_len: usize = self.params.tensors().iter().map(|t| t.numel() * 4).sum();
        let mut out = Vec::with_capacity(12 + json.len() + payload_len);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.params.tensors() {
            for v in t.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("missing MSUMCKPT magic"));
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = &bytes[12..];
        if body.len() < header_len {
            return Err(corrupt("header truncated"));
        }
        let value: serde_json::Value = serde_json::from_slice(&body[..header_len]).map_err(|e| corrupt(format!("header: {e}")))?;
        let version = value.get("version").and_then(|v| v.as_u64()).ok_or_else(|| corrupt("header lacks a version"))?;
        if version != CHECKPOINT_VERSION as u64 {
            return Err(CheckpointError::VersionMismatch {
                found: version as u32,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header: Header = serde_json::from_value(value).map_err(|e| corrupt(format!("header: {e}")))?;
        header.config.validate().map_err(|e| corrupt(e.to_string()))?;
        if header.vocabulary.len() != header.config.vocab_size {
            return Err(corrupt("vocabulary size disagrees with config"));
        }
        let expected = manifest(&header.config);
        if header.manifest != expected {
            return Err(corrupt("parameter manifest does not match the model layout"));
        }
        let payload = &body[header_len..];
        let needed: usize = expected.iter().map(|e| e.shape.iter().product::<usize>() * 4).sum();
        if payload.len() != needed {
            return Err(corrupt(format!("payload has {} bytes, manifest needs {needed}", payload.len())));
        }
        let tensors = expected
            .iter()
            .map(|e| {
                let n: usize = e.shape.iter().product();
                let values = payload[e.offset..e.offset + 4 * n]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect();
                Tensor::new(e.shape.clone(), values).map_err(|err| corrupt(format!("{}: {err}", e.name)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let params = ModelParams::from_tensors(&header.config, tensors).map_err(corrupt)?;
        Ok(Self {
            config: header.config,
            vocabulary: header.vocabulary,
            params,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, ckpt.to_bytes()).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Checkpoint::from_bytes(&bytes)
}
