//! Checkpoint container: `"ISNT"`, u32 version, u64 header length, JSON header,
//! then little-endian tensor payloads in index order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::layers::Params;
use super::net::{InputNorm, QualityNet};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ISNT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub epochs: usize,
    pub folds: usize,
    pub seed: u64,
    /// MUSHRA points per network output unit.
    pub target_scale: f64,
    /// Length every training input was padded to; shorter inputs are padded
    /// to it at inference as well.
    #[serde(default)]
    pub fixed_frames: Option<usize>,
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    frontend: FrontendConfig,
    normalization: NormStats,
    metadata: TrainingMetadata,
    tensors: Vec<TensorEntry>,
}

/// A model together with the frontend settings and training record it was saved with.
pub struct ModelCheckpoint<T> {
    pub model: QualityNet<T>,
    pub frontend: FrontendConfig,
    pub metadata: TrainingMetadata,
}

impl<T: Scalar> ModelCheckpoint<T> {
    pub fn new(model: QualityNet<T>, frontend: FrontendConfig, metadata: TrainingMetadata) -> Self {
        Self {
            model,
            frontend,
            metadata,
        }
    }

    /// Minimum inference length: the training length, or the network minimum if larger.
    pub fn inference_frames(&self) -> usize {
        self.model.min_frames().max(self.metadata.fixed_frames.unwrap_or(0))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::new();
        let mut payload = Vec::new();
        self.model.visit(&mut |name, t, _| {
            entries.push(TensorEntry {
                name,
                dtype: T::DTYPE.to_string(),
                shape: t.shape.clone(),
                offset: payload.len() as u64,
            });
            for &v in &t.data {
                v.write_le(&mut payload);
            }
        });
        let header = Header {
            config: self.model.config().clone(),
            frontend: self.frontend,
            normalization: NormStats {
                mean: self.model.norm.mean.iter().map(|v| v.as_f64()).collect(),
                std: self.model.norm.std.iter().map(|v| v.as_f64()).collect(),
            },
            metadata: self.metadata.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt("header length exceeds file"))?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;
        let payload = &bytes[header_end..];

        let mut tensors = BTreeMap::new();
        for entry in &header.tensors {
            let width = match entry.dtype.as_str() {
                "f32" => 4,
                "f64" => 8,
                other => return Err(Error::CorruptCheckpoint(format!("dtype {other}"))),
            };
            let count: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + count * width;
            if end > payload.len() {
                return Err(Error::CorruptCheckpoint(format!("{} runs past payload", entry.name)));
            }
            let bytes = &payload[start..end];
            let data: Vec<T> = match (width, T::DTYPE) {
                (4, "f32") | (8, "f64") => bytes.chunks_exact(width).map(T::read_le).collect(),
                (4, _) => bytes.chunks_exact(4).map(|c| T::lit(f32::read_le(c) as f64)).collect(),
                _ => bytes.chunks_exact(8).map(|c| T::lit(f64::read_le(c))).collect(),
            };
            tensors.insert(entry.name.clone(), Tensor { shape: entry.shape.clone(), data });
        }

        let mut model = QualityNet::<T>::build(header.config, 0)
            .map_err(|e| Error::CorruptCheckpoint(format!("config: {e}")))?;
        let mut problem = None;
        model.visit_mut(&mut |name, t, _| match tensors.remove(&name) {
            Some(src) if src.shape == t.shape => *t = src,
            Some(src) => {
                problem.get_or_insert(format!("{name}: shape {:?} vs {:?}", src.shape, t.shape));
            }
            None => {
                problem.get_or_insert(format!("missing tensor {name}"));
            }
        });
        if let Some(p) = problem {
            return Err(Error::CorruptCheckpoint(p));
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::CorruptCheckpoint(format!("unexpected tensor {extra}")));
        }
        let bands = model.config().bands;
        let norm = &header.normalization;
        if norm.mean.len() != bands || norm.std.len() != bands {
            return Err(corrupt("normalization stats do not match band count"));
        }
        model.norm = InputNorm {
            mean: norm.mean.iter().map(|&v| T::lit(v)).collect(),
            std: norm.std.iter().map(|&v| T::lit(v)).collect(),
        };
        if !model.all_finite() {
            return Err(corrupt("non-finite parameter"));
        }
        Ok(Self {
            model,
            frontend: header.frontend,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_checkpoint<T: Scalar>(checkpoint: &ModelCheckpoint<T>, path: impl AsRef<Path>) -> Result<()> {
    checkpoint.save(path)
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelCheckpoint<T>> {
    ModelCheckpoint::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::InputLayout;

    fn tiny_checkpoint() -> ModelCheckpoint<f32> {
        let mut model = QualityNet::build(ModelConfig::tiny(InputLayout::Stereo), 5).unwrap();
        model.norm.mean[3] = -42.5;
        model.norm.std[3] = 7.25;
        ModelCheckpoint::new(model, FrontendConfig::default(), TrainingMetadata {
            epochs: 3,
            folds: 1,
            seed: 5,
            target_scale: 100.0,
            fixed_frames: Some(40),
            notes: BTreeMap::new(),
        })
    }

    #[test]
    fn roundtrip_bit_exact() {
        let ck = tiny_checkpoint();
        let bytes = ck.to_bytes();
        let back = ModelCheckpoint::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(back.model.count_params(), ck.model.count_params());
        assert_eq!(back.model.named_tensors(), ck.model.named_tensors());
        assert_eq!(back.model.norm, ck.model.norm);
        assert_eq!(back.metadata, ck.metadata);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = tiny_checkpoint().to_bytes();
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(
            ModelCheckpoint::<f32>::from_bytes(&wrong),
            Err(Error::CorruptCheckpoint(_))
        ));
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            ModelCheckpoint::<f32>::from_bytes(&bytes),
            Err(Error::VersionMismatch { found: 2, supported: 1 })
        ));
    }

    #[test]
    fn truncated_payload() {
        let bytes = tiny_checkpoint().to_bytes();
        assert!(matches!(
            ModelCheckpoint::<f32>::from_bytes(&bytes[..bytes.len() - 4]),
            Err(Error::CorruptCheckpoint(_))
        ));
    }

    #[test]
    fn loads_across_precisions() {
        let bytes = tiny_checkpoint().to_bytes();
        let wide = ModelCheckpoint::<f64>::from_bytes(&bytes).unwrap();
        let narrow = ModelCheckpoint::<f32>::from_bytes(&wide.to_bytes()).unwrap();
        assert_eq!(narrow.to_bytes(), bytes);
    }
}
