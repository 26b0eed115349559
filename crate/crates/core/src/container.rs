//! Versioned binary model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "QBMODEL\0"
//! version    u32
//! header_len u64
//! header     header_len bytes of UTF-8 JSON (see [`Header`])
//! blocks     for each entry of header.blocks, `len` f64 values
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"QBMODEL\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

impl BlockInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub dims: serde_json::Value,
    pub seed: u64,
    pub config_hash: String,
    pub config: serde_json::Value,
    /// Non-numeric state: vocabularies, answer lists, layout tags.
    pub meta: serde_json::Value,
    pub blocks: Vec<BlockInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: Header,
    pub blocks: Vec<Vec<f64>>,
}

/// SHA-256 over the canonical JSON encoding of a training config.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    format!("{:x}", Sha256::digest(bytes))
}

impl Container {
    pub fn new<C: Serialize>(kind: &str, dims: serde_json::Value, seed: u64, config: &C, meta: serde_json::Value) -> Self {
        Container {
            header: Header {
                kind: kind.to_string(),
                dims,
                seed,
                config_hash: config_hash(config),
                config: serde_json::to_value(config).expect("config serializes"),
                meta,
                blocks: Vec::new(),
            },
            blocks: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, shape: &[usize], data: Vec<f64>) {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "block {name} shape mismatch");
        self.header.blocks.push(BlockInfo {
            name: name.to_string(),
            shape: shape.to_vec(),
        });
        self.blocks.push(data);
    }

    pub fn block(&self, name: &str) -> Result<&[f64]> {
        self.header
            .blocks
            .iter()
            .position(|b| b.name == name)
            .map(|i| self.blocks[i].as_slice())
            .ok_or_else(|| Error::Format(format!("missing block {name:?}")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.header.kind == kind {
            Ok(())
        } else {
            Err(Error::Format(format!(
                "expected a {kind:?} model, found {:?}",
                self.header.kind
            )))
        }
    }

    pub fn meta<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .header
            .meta
            .get(key)
            .ok_or_else(|| Error::Format(format!("missing meta field {key:?}")))?;
        Ok(serde_json::from_value(v.clone())?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let payload: usize = self.blocks.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(20 + header.len() + payload * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for block in &self.blocks {
            for v in block {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |m: &str| Error::Format(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(err("not a model container"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| err("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])?;
        let mut offset = header_end;
        let mut blocks = Vec::with_capacity(header.blocks.len());
        for info in &header.blocks {
            let end = offset + info.len() * 8;
            if end > bytes.len() {
                return Err(Error::Format(format!("truncated block {:?}", info.name)));
            }
            blocks.push(
                bytes[offset..end]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            );
            offset = end;
        }
        if offset != bytes.len() {
            return Err(err("trailing bytes after last block"));
        }
        Ok(Container { header, blocks })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
