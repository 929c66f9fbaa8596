//! Checkpoint layout:
//!
//! ```text
//! b"CASTCKPT" | u64 LE header length | JSON header | f64 LE payloads
//! ```
//!
//! The header lists every tensor (name, shape, dtype) in payload order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::{AdamW, AdamWConfig};
use super::params::ParamStore;
use super::tensor::{checked_numel, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CASTCKPT";
pub const FORMAT_VERSION: u32 = 1;
const MAX_HEADER: u64 = 64 << 20;

const ADAM_M: &str = "@adam.m/";
const ADAM_V: &str = "@adam.v/";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, serde_json::Value>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    /// Parameters in name order, plus optimizer moments when given.
    pub fn from_store(store: &ParamStore, opt: Option<&AdamW>) -> Self {
        let mut named: Vec<_> = store.iter().collect();
        named.sort_by(|a, b| a.1.name.cmp(&b.1.name));
        let mut tensors: Vec<(String, Tensor)> = named
            .iter()
            .map(|(_, p)| (p.name.clone(), p.tensor.clone()))
            .collect();
        let mut meta = BTreeMap::new();
        if let Some(opt) = opt {
            for (id, p) in &named {
                tensors.push((format!("{ADAM_M}{}", p.name), opt.m[id.0].clone()));
            }
            for (id, p) in &named {
                tensors.push((format!("{ADAM_V}{}", p.name), opt.v[id.0].clone()));
            }
            meta.insert("adam.step".into(), opt.step.into());
            meta.insert("adam.config".into(), serde_json::to_value(opt.config).unwrap_or_default());
        }
        Self { meta, tensors }
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors
            .iter()
            .filter(|(n, _)| !n.starts_with('@'))
            .map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Restores optimizer moments saved by [`Checkpoint::from_store`].
    pub fn restore_optimizer(&self, store: &ParamStore) -> Result<Option<AdamW>> {
        let Some(step) = self.meta.get("adam.step").and_then(|v| v.as_u64()) else {
            return Ok(None);
        };
        let config: AdamWConfig = match self.meta.get("adam.config") {
            Some(v) => serde_json::from_value(v.clone())?,
            None => AdamWConfig::default(),
        };
        let mut opt = AdamW::new(store, config);
        opt.step = step;
        for (id, p) in store.iter() {
            let m = self.get(&format!("{ADAM_M}{}", p.name));
            let v = self.get(&format!("{ADAM_V}{}", p.name));
            match (m, v) {
                (Some(m), Some(v)) if m.shape() == p.tensor.shape() && v.shape() == p.tensor.shape() => {
                    opt.m[id.0] = m.clone();
                    opt.v[id.0] = v.clone();
                }
                _ => {
                    return Err(Error::Checkpoint(format!(
                        "missing optimizer moments for `{}`",
                        p.name
                    )))
                }
            }
        }
        Ok(Some(opt))
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = Header {
            format_version: FORMAT_VERSION,
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                    dtype: "f64".into(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let payload: usize = self.tensors.iter().map(|(_, t)| t.numel() * 8).sum();
        let mut out = Vec::with_capacity(16 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let err = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(err("bad magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        if hlen > MAX_HEADER || hlen > (bytes.len() - 16) as u64 {
            return Err(err("header length out of range"));
        }
        let hend = 16 + hlen as usize;
        let header: Header = serde_json::from_slice(&bytes[16..hend])?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        let mut total = 0usize;
        for e in &header.tensors {
            if e.dtype != "f64" {
                return Err(Error::Checkpoint(format!("unsupported dtype `{}`", e.dtype)));
            }
            let n = checked_numel(&e.shape)?;
            total = n
                .checked_mul(8)
                .and_then(|b| total.checked_add(b))
                .ok_or_else(|| err("payload size overflows"))?;
        }
        let body = &bytes[hend..];
        if body.len() != total {
            return Err(Error::Checkpoint(format!(
                "payload is {} bytes, manifest needs {total}",
                body.len()
            )));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut off = 0;
        for e in header.tensors {
            let n = checked_numel(&e.shape)?;
            let data = body[off..off + n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            off += n * 8;
            tensors.push((e.name, Tensor::new(e.shape, data)?));
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
