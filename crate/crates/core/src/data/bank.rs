use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::autodiff::Tensor2;

pub const BANK_MAGIC: &[u8; 8] = b"CLSRFB01";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Text,
}

impl Modality {
    pub fn tag(self) -> u8 {
        match self {
            Modality::Audio => 0,
            Modality::Text => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self, DataError> {
        match tag {
            0 => Ok(Modality::Audio),
            1 => Ok(Modality::Text),
            other => Err(DataError::BadModality(other)),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Audio => "audio",
            Modality::Text => "text",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureItem {
    pub id: String,
    pub vector: Vec<f32>,
}

/// Ordered, id-unique collection of fixed-dimension feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBank {
    modality: Modality,
    dim: usize,
    items: Vec<FeatureItem>,
}

impl FeatureBank {
    pub fn new(modality: Modality, dim: usize) -> Result<Self, DataError> {
        if dim == 0 {
            return Err(DataError::ZeroDim);
        }
        Ok(Self {
            modality,
            dim,
            items: Vec::new(),
        })
    }

    pub fn from_items(
        modality: Modality,
        dim: usize,
        items: impl IntoIterator<Item = FeatureItem>,
    ) -> Result<Self, DataError> {
        let mut bank = Self::new(modality, dim)?;
        let mut seen = HashSet::new();
        for item in items {
            if !seen.insert(item.id.clone()) {
                return Err(DataError::DuplicateId(item.id));
            }
            bank.check_item(&item)?;
            bank.items.push(item);
        }
        Ok(bank)
    }

    fn check_item(&self, item: &FeatureItem) -> Result<(), DataError> {
        if item.vector.len() != self.dim {
            return Err(DataError::DimMismatch {
                id: item.id.clone(),
                dim: self.dim,
                got: item.vector.len(),
            });
        }
        if item.vector.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite { id: item.id.clone() });
        }
        if item.id.len() > u16::MAX as usize {
            return Err(DataError::IdTooLong { id: item.id.clone() });
        }
        Ok(())
    }

    /// Appends an item; ids must stay unique.
    pub fn push(&mut self, id: impl Into<String>, vector: Vec<f32>) -> Result<(), DataError> {
        let item = FeatureItem {
            id: id.into(),
            vector,
        };
        if self.items.iter().any(|i| i.id == item.id) {
            return Err(DataError::DuplicateId(item.id));
        }
        self.check_item(&item)?;
        self.items.push(item);
        Ok(())
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[FeatureItem] {
        &self.items
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|i| i.id.as_str())
    }

    /// All vectors stacked as an `len x dim` tensor, in item order.
    pub fn to_tensor(&self) -> Tensor2<f32> {
        let data = self.items.iter().flat_map(|i| i.vector.iter().copied()).collect();
        Tensor2::new(self.items.len(), self.dim, data).expect("bank vectors are finite")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(17 + self.items.len() * (2 + 8 + 4 * self.dim));
        out.extend_from_slice(BANK_MAGIC);
        out.push(self.modality.tag());
        out.extend_from_slice(&(self.items.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for item in &self.items {
            out.extend_from_slice(&(item.id.len() as u16).to_le_bytes());
            out.extend_from_slice(item.id.as_bytes());
            for v in &item.vector {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DataError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != BANK_MAGIC {
            return Err(DataError::BadMagic {
                found: magic.to_vec(),
            });
        }
        let modality = Modality::from_tag(r.take(1)?[0])?;
        let count = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let mut items = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let id_len = r.u16()? as usize;
            let id_offset = r.pos;
            let id = std::str::from_utf8(r.take(id_len)?)
                .map_err(|_| DataError::BadUtf8(id_offset))?
                .to_owned();
            let raw = r.take(4 * dim)?;
            let vector = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            items.push(FeatureItem { id, vector });
        }
        if r.pos != bytes.len() {
            return Err(DataError::TrailingBytes(bytes.len() - r.pos));
        }
        Self::from_items(modality, dim, items)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(DataError::Truncated {
                offset: self.pos,
                needed: n - (self.bytes.len() - self.pos),
            });
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, DataError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn write_feature_bank(bank: &FeatureBank, path: impl AsRef<Path>) -> Result<(), DataError> {
    fs::write(path, bank.to_bytes())?;
    Ok(())
}

pub fn read_feature_bank(path: impl AsRef<Path>) -> Result<FeatureBank, DataError> {
    FeatureBank::from_bytes(&fs::read(path)?)
}
