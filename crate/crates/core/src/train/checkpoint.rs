use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EvalMetric;
use crate::arch::{param_count, ArchSpec};
use crate::audio::NormStats;
use crate::error::{Error, Result};
use crate::nn::{Network, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    /// Epoch (1-based) the parameters come from; 0 for an untrained model.
    pub epoch: usize,
    pub epochs_run: usize,
    pub eval_metric: EvalMetric,
    pub val_score: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: Tensor<f32>,
}

/// A trained model with everything needed to run it on new features.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchSpec,
    pub norm_stats: NormStats,
    pub labels: Vec<String>,
    pub meta: CheckpointMeta,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    arch: ArchSpec,
    norm_stats: NormStats,
    labels: Vec<String>,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
    payload_bytes: usize,
    sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn from_network(net: &Network<f32>, norm_stats: NormStats, labels: Vec<String>, meta: CheckpointMeta) -> Self {
        let tensors = net
            .named_params()
            .into_iter()
            .map(|(name, p)| NamedTensor {
                name,
                value: p.value.clone(),
            })
            .collect();
        Self {
            arch: net.spec().clone(),
            norm_stats,
            labels,
            meta,
            tensors,
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }

    /// Rebuilds the network and loads every tensor, checking names, shapes
    /// and the total against the architecture's parameter count.
    pub fn to_network(&self) -> Result<Network<f32>> {
        let mut net = Network::<f32>::new(&self.arch, 0)?;
        let expected_total = param_count(&self.arch)?;
        let mut slots = net.named_params_mut();
        for (i, t) in self.tensors.iter().enumerate() {
            let Some((name, p)) = slots.get_mut(i) else {
                return Err(Error::TensorMismatch {
                    tensor: t.name.clone(),
                    detail: "not part of the architecture".into(),
                });
            };
            if *name != t.name {
                return Err(Error::TensorMismatch {
                    tensor: t.name.clone(),
                    detail: format!("architecture expects `{name}` at position {i}"),
                });
            }
            if p.value.shape() != t.value.shape() {
                return Err(Error::TensorMismatch {
                    tensor: t.name.clone(),
                    detail: format!("shape {:?}, architecture expects {:?}", t.value.shape(), p.value.shape()),
                });
            }
            p.value = t.value.clone();
        }
        if let Some((name, _)) = slots.get(self.tensors.len()) {
            return Err(Error::TensorMismatch {
                tensor: name.clone(),
                detail: "missing from checkpoint".into(),
            });
        }
        debug_assert_eq!(self.scalar_count(), expected_total);
        drop(slots);
        Ok(net)
    }

    /// `TCKP`, u32 LE header length, JSON header, then the f32 LE payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::with_capacity(4 * self.scalar_count());
        let mut entries = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            entries.push(TensorEntry {
                name: t.name.clone(),
                shape: t.value.shape().to_vec(),
                offset: payload.len(),
            });
            for v in t.value.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            version: CHECKPOINT_VERSION,
            arch: self.arch.clone(),
            norm_stats: self.norm_stats.clone(),
            labels: self.labels.clone(),
            meta: self.meta.clone(),
            tensors: entries,
            payload_bytes: payload.len(),
            sha256: hex(&Sha256::digest(&payload)),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + json.len() + payload.len());
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Integrity(format!("{} bytes is too short for a header", bytes.len())));
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic {
                what: "checkpoint".into(),
                found: magic,
            });
        }
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let body = &bytes[8..];
        if body.len() < header_len {
            return Err(Error::Integrity("header truncated".into()));
        }
        let header: Header = serde_json::from_slice(&body[..header_len])?;
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "checkpoint".into(),
                version: header.version,
            });
        }
        let payload = &body[header_len..];
        if payload.len() != header.payload_bytes {
            return Err(Error::Integrity(format!(
                "payload is {} bytes, header declares {}",
                payload.len(),
                header.payload_bytes
            )));
        }
        if hex(&Sha256::digest(payload)) != header.sha256 {
            return Err(Error::Integrity("payload checksum mismatch".into()));
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let end = e.offset.checked_add(4 * n).filter(|&end| end <= payload.len());
            let Some(end) = end else {
                return Err(Error::TensorMismatch {
                    tensor: e.name,
                    detail: "extends past the payload".into(),
                });
            };
            let data = payload[e.offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(NamedTensor {
                value: Tensor::from_vec(&e.shape, data)?,
                name: e.name,
            });
        }
        let ckpt = Self {
            arch: header.arch,
            norm_stats: header.norm_stats,
            labels: header.labels,
            meta: header.meta,
            tensors,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// The stored tensors must add up to the architecture's parameter count;
    /// on mismatch the first tensor that disagrees with the architecture is named.
    pub fn validate(&self) -> Result<()> {
        let expected = param_count(&self.arch)?;
        if self.scalar_count() == expected {
            return Ok(());
        }
        self.to_network()?;
        Err(Error::TensorMismatch {
            tensor: self.tensors.last().map_or_else(String::new, |t| t.name.clone()),
            detail: format!("{} scalars stored, architecture has {expected}", self.scalar_count()),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
