//! Single-file checkpoints: magic, header length, JSON header, then
//! little-endian f32 tensors in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::ParamSet;

pub const MAGIC: &[u8; 8] = b"D4DCKPT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub step: u64,
    pub model: ModelConfig,
    pub residual_scale: f64,
    pub tensors: Vec<TensorEntry>,
    /// FNV-1a of the tensor payload, hex.
    pub payload_checksum: String,
    /// Free-form training hyperparameters echoed for provenance.
    #[serde(default)]
    pub hyperparameters: serde_json::Value,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn encode_checkpoint(model: &Model, step: u64, hyperparameters: serde_json::Value) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut payload = Vec::with_capacity(4 * model.num_params());
    model.visit(&mut |name, shape, v| {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
        });
        payload.extend(v.iter().flat_map(|x| (*x as f32).to_le_bytes()));
    });
    let header = CheckpointHeader {
        step,
        model: model.config,
        residual_scale: model.residual_scale,
        tensors,
        payload_checksum: format!("{:016x}", fnv1a(&payload)),
        hyperparameters,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Model, CheckpointHeader)> {
    let corrupt = |m: &str| Error::CheckpointCorrupt(m.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("missing magic"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if len > body.len() {
        return Err(corrupt("header length exceeds file"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&body[..len]).map_err(|e| Error::CheckpointCorrupt(format!("header: {e}")))?;
    let payload = &body[len..];
    if format!("{:016x}", fnv1a(payload)) != header.payload_checksum {
        return Err(corrupt("payload checksum mismatch"));
    }
    let mut model = Model::init(&header.model, 0).map_err(|e| Error::CheckpointCorrupt(format!("model config: {e}")))?;
    let mut expected = Vec::new();
    model.visit(&mut |name, shape, _| {
        expected.push(TensorEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
        })
    });
    if expected != header.tensors {
        return Err(corrupt("tensor layout does not match the model config"));
    }
    if payload.len() != 4 * model.num_params() {
        return Err(corrupt("payload size does not match tensor shapes"));
    }
    let flat: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    model.set_flat(&flat);
    model.residual_scale = header.residual_scale;
    if !model.all_finite() || !(model.residual_scale > 0.0 && model.residual_scale.is_finite()) {
        return Err(corrupt("non-finite parameters"));
    }
    Ok((model, header))
}

pub fn save_checkpoint(path: &Path, model: &Model, step: u64, hyperparameters: serde_json::Value) -> Result<()> {
    let bytes = encode_checkpoint(model, step, hyperparameters)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointHeader)> {
    decode_checkpoint(&fs::read(path)?)
}
