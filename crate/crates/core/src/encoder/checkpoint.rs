//! Checkpoint container.
//!
//! ```text
//! offset  size  content
//! 0       8     magic "SODALAB\0"
//! 8       4     format version, u32 little-endian (currently 1)
//! 12      8     header length H, u64 little-endian
//! 20      H     UTF-8 JSON header: {"config": EncoderConfig,
//!               "heads": {name: n_classes}, "params": [{"name", "shape"}]}
//! 20+H    8·N   parameter values as f64 little-endian, in header order
//! ```
//!
//! Raw little-endian floats make save → load bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderConfig, EncoderModel};
use crate::error::{Error, Result};
use crate::nn::{Param, ParamSet};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SODALAB\0";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    heads: BTreeMap<String, usize>,
    params: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

fn corrupt(message: impl Into<String>) -> Error {
    Error::Parse {
        line: 0,
        message: format!("checkpoint: {}", message.into()),
    }
}

impl EncoderModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config.clone(),
            heads: self.heads.clone(),
            params: self
                .params
                .iter()
                .map(|(name, p)| Entry {
                    name: name.clone(),
                    shape: p.shape.clone(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + header.len() + 8 * self.params.num_values());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, p) in self.params.iter() {
            for v in &p.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body_start = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..body_start])?;
        let mut params = ParamSet::new();
        let mut offset = body_start;
        for entry in header.params {
            let n: usize = entry.shape.iter().product();
            let end = offset + 8 * n;
            if end > bytes.len() {
                return Err(corrupt(format!("truncated values for {}", entry.name)));
            }
            let values = bytes[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.insert(entry.name, Param::new(entry.shape, values));
            offset = end;
        }
        if offset != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        header.config.validate()?;
        Ok(EncoderModel::from_parts(header.config, params, header.heads))
    }
}

pub fn save_checkpoint(model: &EncoderModel, path: &Path) -> Result<()> {
    std::fs::write(path, model.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderModel> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            producer: "sodalab specialize".into(),
        });
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    EncoderModel::from_bytes(&bytes)
}
