use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::nn::ParamStore;
use crate::tensor::Tensor;
use crate::train::{EncoderConfig, HeadConfig, ModelKind};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TSFMCKPT";
pub const VERSION: u32 = 1;

/// Where a set of weights came from. Fine-tuned checkpoints also carry the
/// head and the data geometry needed to rebuild the classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub model_kind: ModelKind,
    pub config_hash: String,
    pub seed: u64,
    pub step: u64,
    pub encoder: EncoderConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier: Option<ClassifierShape>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierShape {
    pub head: HeadConfig,
    pub n_channels: usize,
    pub series_length: usize,
    pub n_classes: usize,
}

impl Provenance {
    pub fn new(encoder: &EncoderConfig, seed: u64, step: u64) -> Result<Self> {
        Ok(Provenance {
            model_kind: encoder.kind(),
            config_hash: config_hash(encoder)?,
            seed,
            step,
            encoder: encoder.clone(),
            classifier: None,
        })
    }
}

/// Hex SHA-256 of the config's JSON encoding.
pub fn config_hash(encoder: &EncoderConfig) -> Result<String> {
    let digest = Sha256::digest(serde_json::to_vec(encoder)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the weights section.
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    provenance: Provenance,
    tensors: Vec<TensorEntry>,
}

/// Named f32 tensors plus provenance. The file layout is the 8-byte magic,
/// a u32 version, a u64 header length, the JSON header, then the weights as
/// contiguous little-endian f32.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub provenance: Provenance,
    pub store: ParamStore<f32>,
}

impl Checkpoint {
    pub fn n_tensors(&self) -> usize {
        self.store.len()
    }

    pub fn n_parameters(&self) -> usize {
        self.store.total_numel()
    }

    pub fn summary(&self) -> String {
        format!(
            "{} checkpoint: {} tensors, {} parameters (seed {}, step {})",
            self.provenance.model_kind,
            self.n_tensors(),
            self.n_parameters(),
            self.provenance.seed,
            self.provenance.step
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let tensors = self
            .store
            .iter()
            .map(|(name, t)| {
                let entry = TensorEntry {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += 4 * t.numel() as u64;
                entry
            })
            .collect();
        let header = serde_json::to_vec(&Header {
            provenance: self.provenance.clone(),
            tensors,
        })?;
        let mut out = Vec::with_capacity(20 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in self.store.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let integrity = |m: String| Error::Integrity(m);
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(integrity("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(integrity(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let body = &bytes[20..];
        if header_len > body.len() as u64 {
            return Err(integrity("header extends past end of file".into()));
        }
        let (header, weights) = body.split_at(header_len as usize);
        let header: Header = serde_json::from_slice(header)
            .map_err(|e| integrity(format!("invalid header: {e}")))?;

        let mut store = ParamStore::new();
        let mut expected = 0u64;
        for entry in &header.tensors {
            if entry.offset != expected {
                return Err(integrity(format!(
                    "tensor {} starts at byte {}, expected {expected}",
                    entry.name, entry.offset
                )));
            }
            let n = entry.shape.iter().product::<usize>();
            let end = expected + 4 * n as u64;
            if end > weights.len() as u64 {
                return Err(integrity(format!(
                    "weights truncated: tensor {} needs bytes {expected}..{end}, file has {}",
                    entry.name,
                    weights.len()
                )));
            }
            let data = weights[expected as usize..end as usize]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            if store.id(&entry.name).is_some() {
                return Err(integrity(format!("duplicate tensor {}", entry.name)));
            }
            store.add(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?);
            expected = end;
        }
        if expected != weights.len() as u64 {
            return Err(integrity(format!(
                "{} trailing bytes after the last tensor",
                weights.len() as u64 - expected
            )));
        }
        Ok(Checkpoint {
            provenance: header.provenance,
            store,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)
            .map_err(|e| Error::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
