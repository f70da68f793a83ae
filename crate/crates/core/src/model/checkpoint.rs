//! Versioned binary checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! b"UNAAHCKP" | u32 version | u64 header_len | header JSON | f32 blobs...
//! ```
//!
//! The header echoes the [`ModelSpec`], seed and epoch and lists every
//! parameter/buffer by layer path with its shape; blobs follow in that order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::Visit;
use super::network::{ModelSpec, Network};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"UNAAHCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    seed: u64,
    epoch: usize,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub seed: u64,
    pub epoch: usize,
    pub tensors: Vec<(TensorEntry, Vec<f32>)>,
}

impl Checkpoint {
    pub fn capture(net: &mut Network, seed: u64, epoch: usize) -> Self {
        let mut tensors = Vec::new();
        net.visit("", &mut |name, p| {
            tensors.push((
                TensorEntry {
                    name: name.to_string(),
                    shape: p.shape.clone(),
                },
                p.value.clone(),
            ));
        });
        Checkpoint {
            spec: net.spec.clone(),
            seed,
            epoch,
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            spec: self.spec.clone(),
            seed: self.seed,
            epoch: self.epoch,
            tensors: self.tensors.iter().map(|(e, _)| e.clone()).collect(),
        };
        let hjson = serde_json::to_vec(&header).expect("checkpoint header serializes");
        let mut out = Vec::with_capacity(20 + hjson.len() + 4 * self.tensors.iter().map(|t| t.1.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(hjson.len() as u64).to_le_bytes());
        out.extend_from_slice(&hjson);
        for (_, data) in &self.tensors {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let mut offset = 20 + hlen;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let raw = bytes
                .get(offset..offset + 4 * n)
                .ok_or_else(|| Error::Checkpoint(format!("truncated blob for {}", entry.name)))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            offset += 4 * n;
            tensors.push((entry, data));
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after last blob"));
        }
        Ok(Checkpoint {
            spec: header.spec,
            seed: header.seed,
            epoch: header.epoch,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Copies stored values into `net`. Fails, naming the first key that
    /// differs in name or shape, if the layouts disagree.
    pub fn apply_to(&self, net: &mut Network) -> Result<()> {
        let mut expected = Vec::new();
        net.visit("", &mut |name, p| expected.push((name.to_string(), p.shape.clone())));
        for (i, (name, shape)) in expected.iter().enumerate() {
            match self.tensors.get(i) {
                Some((e, _)) if &e.name == name && &e.shape == shape => {}
                Some((e, _)) => {
                    return Err(Error::Checkpoint(format!(
                        "mismatched key {name} {shape:?}: checkpoint has {} {:?}",
                        e.name, e.shape
                    )))
                }
                None => return Err(Error::Checkpoint(format!("mismatched key {name}: missing from checkpoint"))),
            }
        }
        if let Some((e, _)) = self.tensors.get(expected.len()) {
            return Err(Error::Checkpoint(format!("mismatched key {}: not present in model", e.name)));
        }
        let mut i = 0;
        net.visit("", &mut |_, p| {
            p.value.copy_from_slice(&self.tensors[i].1);
            i += 1;
        });
        Ok(())
    }

    /// Rebuilds the network described by the stored spec.
    pub fn into_network(&self) -> Result<Network> {
        let mut net = Network::init(&self.spec, self.seed)?;
        self.apply_to(&mut net)?;
        Ok(net)
    }

    /// Loads into a network built from `spec`; errors if the layouts differ.
    pub fn into_network_for(&self, spec: &ModelSpec) -> Result<Network> {
        let mut net = Network::init(spec, self.seed)?;
        self.apply_to(&mut net)?;
        Ok(net)
    }
}
