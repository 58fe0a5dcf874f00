//! Checkpoint container: magic bytes, a little-endian `u64` header length, a
//! JSON header (format version, configs, metadata, tensor manifest), then the
//! tensors as little-endian `f32`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{Model, ModelConfig, ModelError};
use crate::tensor::Mat;
use crate::training::TrainConfig;

pub const MAGIC: &[u8; 8] = b"S2FCKPT\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub dev_f1: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub dtype: String,
    /// Byte offset into the data section.
    pub offset: usize,
    /// Number of elements.
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub meta: CheckpointMeta,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: [usize; 2],
        found: [usize; 2],
    },
    #[error("tensor {0} missing from checkpoint")]
    MissingTensor(String),
    #[error("checkpoint holds unknown tensor {0}")]
    UnknownTensor(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub struct Checkpoint {
    pub model: Model,
    pub train: Option<TrainConfig>,
    pub meta: CheckpointMeta,
}

pub fn to_bytes(model: &Model, train: Option<&TrainConfig>, meta: &CheckpointMeta) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut data = Vec::new();
    for (_, name, m) in model.params.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: [m.rows(), m.cols()],
            dtype: "f32".into(),
            offset: data.len(),
            len: m.len(),
        });
        for &v in m.data() {
            data.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let header = Header {
        format: "s2f-checkpoint".into(),
        version: FORMAT_VERSION,
        model: model.config().clone(),
        train: train.cloned(),
        meta: meta.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    out
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    train: Option<&TrainConfig>,
    meta: &CheckpointMeta,
) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&to_bytes(model, train, meta)).map_err(io)?;
    Ok(())
}

/// Splits a container into its header and data section.
pub fn read_header(bytes: &[u8]) -> Result<(Header, &[u8]), CheckpointError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let rest = &bytes[MAGIC.len()..];
    if rest.len() < 8 {
        return Err(CheckpointError::Corrupt("truncated header length".into()));
    }
    let len = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
    let rest = &rest[8..];
    if rest.len() < len {
        return Err(CheckpointError::Corrupt("truncated header".into()));
    }
    let value: serde_json::Value = serde_json::from_slice(&rest[..len])
        .map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
    let version = value.get("version").and_then(|v| v.as_u64());
    match version {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => return Err(CheckpointError::Version { found: v as u32 }),
        None => return Err(CheckpointError::Corrupt("header has no version".into())),
    }
    let header: Header = serde_json::from_value(value)
        .map_err(|e| CheckpointError::Corrupt(format!("header: {e}")))?;
    Ok((header, &rest[len..]))
}

fn read_tensor(entry: &TensorEntry, data: &[u8]) -> Result<Mat, CheckpointError> {
    if entry.dtype != "f32" {
        return Err(CheckpointError::Corrupt(format!(
            "tensor {} has dtype {}",
            entry.name, entry.dtype
        )));
    }
    if entry.shape[0] * entry.shape[1] != entry.len {
        return Err(CheckpointError::Corrupt(format!(
            "tensor {} length does not match its shape",
            entry.name
        )));
    }
    let end = entry
        .offset
        .checked_add(entry.len * 4)
        .filter(|&e| e <= data.len())
        .ok_or_else(|| CheckpointError::Corrupt(format!("tensor {} is truncated", entry.name)))?;
    let values = data[entry.offset..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(Mat::from_vec(entry.shape[0], entry.shape[1], values))
}

/// Copies every tensor of the container into `model`, which must have the
/// same parameter names and shapes.
pub fn load_params_into(
    model: &mut Model,
    header: &Header,
    data: &[u8],
) -> Result<(), CheckpointError> {
    let mut seen = vec![false; model.params.len()];
    for entry in &header.tensors {
        let id = model
            .params
            .id(&entry.name)
            .ok_or_else(|| CheckpointError::UnknownTensor(entry.name.clone()))?;
        let target = model.params.get(id);
        let expected = [target.rows(), target.cols()];
        if expected != entry.shape {
            return Err(CheckpointError::ShapeMismatch {
                name: entry.name.clone(),
                expected,
                found: entry.shape,
            });
        }
        *model.params.get_mut(id) = read_tensor(entry, data)?;
        seen[id.index()] = true;
    }
    if let Some(id) = model.params.ids().find(|id| !seen[id.index()]) {
        return Err(CheckpointError::MissingTensor(model.params.name(id).to_string()));
    }
    Ok(())
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let (header, data) = read_header(bytes)?;
    let mut model = Model::new(header.model.clone(), 0)?;
    load_params_into(&mut model, &header, data)?;
    let expected: usize = header.tensors.iter().map(|t| t.len * 4).sum();
    if data.len() != expected {
        return Err(CheckpointError::Corrupt(format!(
            "data section has {} bytes, manifest describes {expected}",
            data.len()
        )));
    }
    Ok(Checkpoint {
        model,
        train: header.train,
        meta: header.meta,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}
