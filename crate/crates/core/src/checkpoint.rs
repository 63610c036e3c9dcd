//! Checkpoint files.
//!
//! Layout (little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `CLSRCK01` |
//! | 4     | `u32` header length `H` |
//! | H     | UTF-8 JSON header: dims, seed, epoch, optional score, tensor index |
//! | ...   | per indexed tensor, `rows * cols` `f32` values, row-major |

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor2;
use crate::model::{ModelDims, ModelError, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CLSRCK01";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint index does not match the model layout: {0}")]
    Layout(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    dims: ModelDims,
    seed: u64,
    epoch: usize,
    score: Option<f64>,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub seed: u64,
    /// Number of completed epochs.
    pub epoch: usize,
    /// Validation score that selected this checkpoint, if any.
    pub score: Option<f64>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let names = ModelParams::<f32>::tensor_names();
        let tensors = self.params.tensors();
        let header = Header {
            dims: self.params.dims,
            seed: self.seed,
            epoch: self.epoch,
            score: self.score,
            tensors: names
                .into_iter()
                .zip(&tensors)
                .map(|(name, t)| TensorEntry {
                    name,
                    rows: t.rows(),
                    cols: t.cols(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 12 {
            return Err(CheckpointError::Truncated);
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes.get(12..12 + header_len).ok_or(CheckpointError::Truncated)?;
        let header: Header = serde_json::from_slice(body)?;
        let expected = ModelParams::<f32>::tensor_names();
        let names: Vec<&str> = header.tensors.iter().map(|t| t.name.as_str()).collect();
        if names != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(CheckpointError::Layout(format!("tensor names {names:?}")));
        }
        let mut pos = 12 + header_len;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in &header.tensors {
            let n = entry.rows * entry.cols;
            let raw = bytes.get(pos..pos + 4 * n).ok_or(CheckpointError::Truncated)?;
            pos += 4 * n;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor2::new(entry.rows, entry.cols, data)
                .map_err(|e| CheckpointError::Layout(format!("{}: {e}", entry.name)))?;
            tensors.push(t);
        }
        if pos != bytes.len() {
            return Err(CheckpointError::Layout(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Self {
            params: ModelParams::from_tensors(header.dims, tensors)?,
            seed: header.seed,
            epoch: header.epoch,
            score: header.score,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
