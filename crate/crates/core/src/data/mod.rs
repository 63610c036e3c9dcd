//! Feature banks, pairing manifests, synthetic datasets and batch sampling.

mod bank;
mod batch;
mod manifest;
mod synth;

pub use bank::{read_feature_bank, write_feature_bank, FeatureBank, FeatureItem, Modality, BANK_MAGIC};
pub use batch::{sample_batches, Batch, BatchPlan};
pub use manifest::{Manifest, PairedDataset, Split};
pub use synth::{make_synthetic_dataset, SynthConfig, SyntheticDataset};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad feature-bank magic {found:?} (expected \"CLSRFB01\")")]
    BadMagic { found: Vec<u8> },
    #[error("feature bank truncated: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("feature bank has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("unknown modality tag {0}")]
    BadModality(u8),
    #[error("item id is not valid UTF-8 at offset {0}")]
    BadUtf8(usize),
    #[error("item id {id:?} is longer than 65535 bytes")]
    IdTooLong { id: String },
    #[error("duplicate item id {0:?}")]
    DuplicateId(String),
    #[error("item {id:?} has {got} values, bank dim is {dim}")]
    DimMismatch { id: String, dim: usize, got: usize },
    #[error("item {id:?} contains a non-finite value")]
    NonFinite { id: String },
    #[error("feature dimension must be > 0")]
    ZeroDim,
    #[error("manifest JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("manifest references unknown {modality} id {id:?}")]
    UnknownId { modality: Modality, id: String },
    #[error("manifest pair ({audio:?}, {text:?}) is missing from the caption group of {audio:?}")]
    PairNotInCaptions { audio: String, text: String },
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("batch size must be >= 2 (got {0}); the contrastive loss needs a negative")]
    BatchTooSmall(usize),
}
