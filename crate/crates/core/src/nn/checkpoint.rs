//! Binary checkpoint container.
//!
//! Layout: `u64` little-endian header length, a JSON header, then the raw
//! little-endian tensor payload. Offsets in the header are relative to the
//! start of the payload.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: [usize; 2],
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    /// Free-form metadata (training state, objective, seeds).
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// A loaded checkpoint: model parameters plus any auxiliary tensors.
#[derive(Clone, Debug)]
pub struct Checkpoint<T: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub extra: Vec<(String, Tensor<T>)>,
    pub meta: serde_json::Value,
}

/// Write the parameters and `extra` tensors (names must not collide with
/// parameter names).
pub fn save_checkpoint<T: Real>(
    path: &Path,
    cfg: &ModelConfig,
    params: &ParamStore<T>,
    extra: &[(String, &Tensor<T>)],
    meta: serde_json::Value,
) -> Result<()> {
    let mut entries = Vec::new();
    let mut payload = Vec::new();
    let all = params
        .names()
        .iter()
        .cloned()
        .zip(params.tensors().iter())
        .chain(extra.iter().map(|(n, t)| (n.clone(), *t)));
    for (name, t) in all {
        entries.push(TensorEntry { name, dtype: T::DTYPE.into(), shape: [t.rows(), t.cols()], offset: payload.len() });
        payload.extend(T::to_le_bytes_vec(t.data()));
    }
    let mut meta = meta;
    if meta.is_null() {
        meta = serde_json::json!({});
    }
    if let Some(obj) = meta.as_object_mut() {
        obj.insert("init_seed".into(), params.seed.into());
    }
    let header = CheckpointHeader { format_version: FORMAT_VERSION, model_config: cfg.clone(), tensors: entries, meta };
    let hbytes = serde_json::to_vec(&header)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&(hbytes.len() as u64).to_le_bytes())?;
        f.write_all(&hbytes)?;
        f.write_all(&payload)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

/// Read only the header.
pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = fs::read(path)?;
    Ok(split(&bytes)?.0)
}

fn split(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    if bytes.len() < 8 {
        return Err(Error::Checkpoint("file too short".into()));
    }
    let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + n {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[8..8 + n])?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {}", header.format_version)));
    }
    Ok((header, &bytes[8 + n..]))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path)?;
    let (header, payload) = split(&bytes)?;
    header.model_config.validate()?;
    let width = std::mem::size_of::<T>();
    let mut named = HashMap::new();
    let mut extra = Vec::new();
    let param_names: std::collections::HashSet<String> =
        super::params::layout(&header.model_config).into_iter().map(|(n, ..)| n).collect();
    for e in &header.tensors {
        if e.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!("tensor `{}` is {}, requested {}", e.name, e.dtype, T::DTYPE)));
        }
        let len = e.shape[0] * e.shape[1] * width;
        let bytes = payload
            .get(e.offset..e.offset + len)
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{}` runs past the payload", e.name)))?;
        let t = Tensor::from_vec(e.shape[0], e.shape[1], T::from_le_bytes_slice(bytes));
        if param_names.contains(&e.name) {
            named.insert(e.name.clone(), t);
        } else {
            extra.push((e.name.clone(), t));
        }
    }
    let seed = header.meta.get("init_seed").and_then(|v| v.as_u64()).unwrap_or(0);
    let params = ParamStore::from_named(&header.model_config, named, seed)?;
    Ok(Checkpoint { config: header.model_config, params, extra, meta: header.meta })
}

/// Header of a plain tensor file (same layout, no model configuration).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorFileHeader {
    format_version: u32,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Write named tensors in the checkpoint layout.
pub fn save_tensors<T: Real>(path: &Path, tensors: &[(String, &Tensor<T>)], meta: serde_json::Value) -> Result<()> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut payload = Vec::new();
    for (name, t) in tensors {
        entries.push(TensorEntry { name: name.clone(), dtype: T::DTYPE.into(), shape: [t.rows(), t.cols()], offset: payload.len() });
        payload.extend(T::to_le_bytes_vec(t.data()));
    }
    let header = TensorFileHeader { format_version: FORMAT_VERSION, tensors: entries, meta };
    let hbytes = serde_json::to_vec(&header)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&(hbytes.len() as u64).to_le_bytes())?;
    f.write_all(&hbytes)?;
    f.write_all(&payload)?;
    Ok(())
}

/// Read every tensor of a file written by [`save_tensors`] or [`save_checkpoint`].
pub fn load_tensors<T: Real>(path: &Path) -> Result<(Vec<(String, Tensor<T>)>, serde_json::Value)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 {
        return Err(Error::Checkpoint("file too short".into()));
    }
    let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let hb = bytes.get(8..8 + n).ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: TensorFileHeader = serde_json::from_slice(hb)?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {}", header.format_version)));
    }
    let payload = &bytes[8 + n..];
    let width = std::mem::size_of::<T>();
    let mut out = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        if e.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!("tensor `{}` is {}, requested {}", e.name, e.dtype, T::DTYPE)));
        }
        let len = e.shape[0] * e.shape[1] * width;
        let b = payload
            .get(e.offset..e.offset + len)
            .ok_or_else(|| Error::Checkpoint(format!("tensor `{}` runs past the payload", e.name)))?;
        out.push((e.name.clone(), Tensor::from_vec(e.shape[0], e.shape[1], T::from_le_bytes_slice(b))));
    }
    Ok((out, header.meta))
}
