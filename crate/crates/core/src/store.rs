//! `NTS1` named-tensor container.
//!
//! Layout:
//!
//! ```text
//! "NTS1"                      4 bytes magic
//! header_len                  u64 little-endian
//! header                      header_len bytes of UTF-8 JSON
//! zero padding                up to the next 64-byte file offset
//! payloads                    little-endian f32, in header order; each
//!                             payload starts on a 64-byte boundary
//! ```
//!
//! The header is `{"tensors": [{"name", "dtype", "shape", "offset"}...],
//! "metadata": {string: string}}`, where `offset` is relative to the start
//! of the payload region. Only dtype `"f32"` is defined.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"NTS1";
pub const ALIGN: usize = 64;

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tensors: Vec<HeaderEntry>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

fn align_up(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

/// Ordered collection of named f32 tensors plus string metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NamedTensorStore {
    tensors: Vec<(String, Tensor)>,
    metadata: BTreeMap<String, String>,
}

impl NamedTensorStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a tensor. New names are appended in order.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        match self.tensors.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = tensor,
            None => self.tensors.push((name, tensor)),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::invalid(format!("tensor `{name}` missing from store")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.iter().any(|(n, _)| n == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn metadata(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn metadata_map(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            entries.push(HeaderEntry {
                name: name.clone(),
                dtype: "f32".into(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset = align_up(offset + t.len() * 4);
        }
        let header = serde_json::to_vec(&Header {
            tensors: entries,
            metadata: self.metadata.clone(),
        })?;

        let data_start = align_up(MAGIC.len() + 8 + header.len());
        let mut out = Vec::with_capacity(data_start + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.resize(data_start, 0);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.resize(align_up(out.len()), 0);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::invalid("not an NTS1 tensor store (bad magic)"));
        }
        let header_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let header_end = 12usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::invalid("NTS1 header extends past end of file"))?;
        let header: Header = serde_json::from_slice(&bytes[12..header_end])?;
        let data_start = align_up(header_end);

        let mut store = NamedTensorStore {
            tensors: Vec::with_capacity(header.tensors.len()),
            metadata: header.metadata,
        };
        for entry in header.tensors {
            if entry.dtype != "f32" {
                return Err(Error::invalid(format!(
                    "tensor `{}` has unsupported dtype `{}`",
                    entry.name, entry.dtype
                )));
            }
            if entry.offset % ALIGN != 0 {
                return Err(Error::invalid(format!(
                    "tensor `{}` payload is not {ALIGN}-byte aligned",
                    entry.name
                )));
            }
            let count: usize = entry.shape.iter().product();
            let start = data_start + entry.offset;
            let end = start + count * 4;
            if end > bytes.len() {
                return Err(Error::invalid(format!(
                    "tensor `{}` payload is truncated",
                    entry.name
                )));
            }
            let data = bytes[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let tensor = Tensor::new(entry.shape, data)?;
            store.insert(entry.name, tensor);
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_aligned() {
        let mut s = NamedTensorStore::new();
        s.insert("a", Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
        s.insert("b", Tensor::zeros(vec![2, 2]));
        s.set_metadata("k", "v");
        let bytes = s.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"NTS1");
        let header_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
        let data_start = align_up(12 + header_len);
        // first payload right at the aligned data start
        assert_eq!(f32::from_le_bytes(bytes[data_start..data_start + 4].try_into().unwrap()), 1.0);
        // second payload starts at the next 64-byte boundary
        assert_eq!(bytes.len(), data_start + 64 + 64);
        assert_eq!(NamedTensorStore::from_bytes(&bytes).unwrap(), s);
    }

    #[test]
    fn insert_replaces_in_place() {
        let mut s = NamedTensorStore::new();
        s.insert("a", Tensor::zeros(vec![1]));
        s.insert("b", Tensor::zeros(vec![1]));
        s.insert("a", Tensor::zeros(vec![2]));
        assert_eq!(s.names().collect::<Vec<_>>(), vec!["a", "b"]);
        assert_eq!(s.get("a").unwrap().shape(), &[2]);
    }

    #[test]
    fn rejects_garbage() {
        assert!(NamedTensorStore::from_bytes(b"NOPE00000000").is_err());
        let mut s = NamedTensorStore::new();
        s.insert("a", Tensor::vector(vec![1.0; 40]).unwrap());
        let bytes = s.to_bytes().unwrap();
        assert!(NamedTensorStore::from_bytes(&bytes[..bytes.len() - 100]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(tensors in prop::collection::vec(
            (prop::collection::vec(1usize..4, 0..3), -100.0f32..100.0), 0..6)) {
            let mut s = NamedTensorStore::new();
            for (i, (shape, fill)) in tensors.into_iter().enumerate() {
                let n: usize = shape.iter().product();
                let data = (0..n).map(|j| fill + j as f32).collect();
                s.insert(format!("t.{i}"), Tensor::new(shape, data).unwrap());
            }
            s.set_metadata("variant", "glu");
            let back = NamedTensorStore::from_bytes(&s.to_bytes().unwrap()).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
