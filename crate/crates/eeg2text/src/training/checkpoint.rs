//! Binary checkpoint file: `EEG2T` magic, u32 version, length-prefixed JSON
//! header (configs, training provenance, buffer directory), raw little-endian
//! f32 buffers, CRC32 trailer over everything before it. Saving is
//! byte-deterministic so identical runs produce identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Checkpoint, TrainConfig, TrainError};
use crate::autodiff::{AdamState, Params, Tensor};
use crate::model::ModelConfig;

const MAGIC: &[u8; 5] = b"EEG2T";
pub(crate) const CKPT_VERSION: u32 = 1;

/// Optimizer moments are stored as plain buffers under reserved name
/// prefixes; model parameter names never start with this.
const OPT_M: &str = "opt.m.";
const OPT_V: &str = "opt.v.";

#[derive(Serialize, Deserialize)]
struct BufferEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the buffer section.
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    epoch: usize,
    loss_history: Vec<f64>,
    /// Adam step count per parameter with optimizer state.
    opt_steps: BTreeMap<String, u64>,
    buffers: Vec<BufferEntry>,
}

fn push_buffer(
    buffers: &mut Vec<BufferEntry>,
    blob: &mut Vec<u8>,
    name: String,
    shape: Vec<usize>,
    data: &[f32],
) {
    buffers.push(BufferEntry { name, shape, offset: blob.len() as u64 });
    for v in data {
        blob.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>, TrainError> {
    let mut buffers = Vec::new();
    let mut blob = Vec::new();
    for (name, t) in ckpt.params.iter() {
        push_buffer(&mut buffers, &mut blob, name.clone(), t.shape().to_vec(), t.data());
    }
    for (name, st) in &ckpt.opt {
        push_buffer(&mut buffers, &mut blob, format!("{OPT_M}{name}"), vec![st.m.len()], &st.m);
        push_buffer(&mut buffers, &mut blob, format!("{OPT_V}{name}"), vec![st.v.len()], &st.v);
    }
    let header = Header {
        model: ckpt.model.clone(),
        train: ckpt.train.clone(),
        epoch: ckpt.epoch,
        loss_history: ckpt.loss_history.clone(),
        opt_steps: ckpt.opt.iter().map(|(k, s)| (k.clone(), s.t)).collect(),
        buffers,
    };
    let hjson = serde_json::to_vec(&header)
        .map_err(|e| TrainError::Corrupt(format!("header serialization failed: {e}")))?;
    let mut out = Vec::with_capacity(17 + hjson.len() + blob.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(hjson.len() as u64).to_le_bytes());
    out.extend_from_slice(&hjson);
    out.extend_from_slice(&blob);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), TrainError> {
    let bytes = encode(ckpt)?;
    fs::write(path, &bytes)
        .map_err(|source| TrainError::Io { path: path.display().to_string(), source })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let bytes = fs::read(path)
        .map_err(|source| TrainError::Io { path: path.display().to_string(), source })?;
    decode(&bytes)
}

fn decode(bytes: &[u8]) -> Result<Checkpoint, TrainError> {
    if bytes.len() < MAGIC.len() + 4 + 8 + 4 {
        return Err(TrainError::Corrupt("file shorter than the fixed framing".into()));
    }
    if &bytes[..5] != MAGIC {
        return Err(TrainError::Corrupt("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes"));
    if version != CKPT_VERSION {
        return Err(TrainError::VersionMismatch { got: version, want: CKPT_VERSION });
    }
    let body_end = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("4 bytes"));
    if crc32fast::hash(&bytes[..body_end]) != stored {
        return Err(TrainError::Corrupt("checksum mismatch".into()));
    }
    let hlen = u64::from_le_bytes(bytes[9..17].try_into().expect("8 bytes")) as usize;
    let body = &bytes[17..body_end];
    if hlen > body.len() {
        return Err(TrainError::Corrupt("header length exceeds the file".into()));
    }
    let header: Header = serde_json::from_slice(&body[..hlen])
        .map_err(|e| TrainError::Corrupt(format!("header parse failed: {e}")))?;
    let blob = &body[hlen..];

    let mut params = Params::new();
    let mut opt_m: BTreeMap<String, Vec<f32>> = BTreeMap::new();
    let mut opt_v: BTreeMap<String, Vec<f32>> = BTreeMap::new();
    let mut total = 0usize;
    for entry in &header.buffers {
        let numel: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start.checked_add(numel * 4).filter(|&e| e <= blob.len()).ok_or_else(|| {
            TrainError::Corrupt(format!("buffer {:?} extends past the file", entry.name))
        })?;
        total += numel * 4;
        let data: Vec<f32> = blob[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if let Some(name) = entry.name.strip_prefix(OPT_M) {
            if opt_m.insert(name.to_string(), data).is_some() {
                return Err(TrainError::Corrupt(format!("duplicate buffer {:?}", entry.name)));
            }
        } else if let Some(name) = entry.name.strip_prefix(OPT_V) {
            if opt_v.insert(name.to_string(), data).is_some() {
                return Err(TrainError::Corrupt(format!("duplicate buffer {:?}", entry.name)));
            }
        } else {
            let t = Tensor::new(entry.shape.clone(), data)
                .map_err(|e| TrainError::Corrupt(e.to_string()))?;
            params
                .insert(&entry.name, t)
                .map_err(|_| TrainError::Corrupt(format!("duplicate buffer {:?}", entry.name)))?;
        }
    }
    if total != blob.len() {
        return Err(TrainError::Corrupt(format!(
            "buffer section holds {} bytes but the directory accounts for {total}",
            blob.len()
        )));
    }
    let mut opt = BTreeMap::new();
    for (name, t) in &header.opt_steps {
        let m = opt_m
            .remove(name)
            .ok_or_else(|| TrainError::Corrupt(format!("missing first moment for {name:?}")))?;
        let v = opt_v
            .remove(name)
            .ok_or_else(|| TrainError::Corrupt(format!("missing second moment for {name:?}")))?;
        opt.insert(name.clone(), AdamState { m, v, t: *t });
    }
    if let Some(name) = opt_m.keys().chain(opt_v.keys()).next() {
        return Err(TrainError::Corrupt(format!("moment buffers for {name:?} lack a step count")));
    }
    Ok(Checkpoint {
        params,
        opt,
        model: header.model,
        train: header.train,
        epoch: header.epoch,
        loss_history: header.loss_history,
        format_version: version,
    })
}
