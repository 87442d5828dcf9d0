//! Named parameter store and its on-disk checkpoint format.
//!
//! A checkpoint is a single file: an 8-byte little-endian header length, a
//! JSON header mapping parameter name to shape and byte offset, then the raw
//! little-endian f64 payload. Names are stored sorted, so saving a loaded
//! checkpoint reproduces the file byte for byte.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    shape: Vec<usize>,
    offset: u64,
}

/// Ordered collection of named parameter tensors.
#[derive(Default, Clone)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        self.params.insert(name.to_string(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Names in sorted order.
    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    /// Same values with gradient tracking severed, for inference paths.
    pub fn detached(&self) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.detach()))
                .collect(),
        }
    }

    /// Same values as fresh gradient-tracking leaves, one per optimizer step,
    /// so each step's graph starts from clean roots.
    pub fn leaves(&self) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.detach_param()))
                .collect(),
        }
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut header: BTreeMap<&str, HeaderEntry> = BTreeMap::new();
        let mut offset = 0u64;
        for (name, t) in &self.params {
            header.insert(
                name,
                HeaderEntry {
                    shape: t.shape().to_vec(),
                    offset,
                },
            );
            offset += (t.len() * 8) as u64;
        }
        let header_bytes = serde_json::to_vec(&header)
            .map_err(|e| Error::Config(format!("checkpoint header encode: {e}")))?;

        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        file.write_all(&header_bytes)?;
        for t in self.params.values() {
            for v in t.data() {
                file.write_all(&v.to_le_bytes())?;
            }
        }
        file.flush()?;
        Ok(())
    }

    /// Loads parameters as gradient-tracked leaves.
    pub fn load(path: &Path) -> Result<ParamStore> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut len_bytes = [0u8; 8];
        file.read_exact(&mut len_bytes)?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let mut header_bytes = vec![0u8; header_len];
        file.read_exact(&mut header_bytes)?;
        let header: BTreeMap<String, HeaderEntry> = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::Config(format!("checkpoint header decode: {e}")))?;

        let mut payload = Vec::new();
        file.read_to_end(&mut payload)?;

        let mut params = BTreeMap::new();
        for (name, entry) in header {
            let count: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + count * 8;
            if end > payload.len() {
                return Err(Error::Config(format!(
                    "checkpoint payload truncated for '{name}': needs {end} bytes, has {}",
                    payload.len()
                )));
            }
            let data: Vec<f64> = payload[start..end]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            params.insert(name, Tensor::param(&entry.shape, data)?);
        }
        Ok(ParamStore { params })
    }
}
