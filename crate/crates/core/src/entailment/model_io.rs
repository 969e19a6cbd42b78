//! Model file layout (little-endian):
//!
//! ```text
//! b"CLZM" | u32 version | u32 header length | JSON header | f64 w1 | b1 | w2 | b2
//! ```
//!
//! The header carries config, shapes, feature source and the dev history.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::mlp::{MlpParams, CLASSES};
use super::train::{TrainConfig, TrainedModel};
use super::FeatureSource;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CLZM";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    input_dim: usize,
    hidden: usize,
    feature_source: FeatureSource,
    best_epoch: usize,
    dev_accuracy_history: Vec<f64>,
    config: TrainConfig,
}

pub fn write_model(model: &TrainedModel, mut out: impl Write) -> Result<()> {
    let header = Header {
        input_dim: model.params.input_dim,
        hidden: model.params.hidden,
        feature_source: model.feature_source,
        best_epoch: model.best_epoch,
        dev_accuracy_history: model.dev_accuracy_history.clone(),
        config: model.config,
    };
    let json = serde_json::to_vec(&header)?;
    let io = |e: std::io::Error| Error::ModelFormat(e.to_string());
    out.write_all(MAGIC).map_err(io)?;
    out.write_all(&MODEL_FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    out.write_all(&(json.len() as u32).to_le_bytes()).map_err(io)?;
    out.write_all(&json).map_err(io)?;
    for t in model.params.tensors() {
        for v in t {
            out.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::ModelFormat(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::ModelFormat(format!("truncated parameters: {e}")))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn read_model(mut input: impl Read) -> Result<TrainedModel> {
    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|e| Error::ModelFormat(e.to_string()))?;
    if &magic != MAGIC {
        return Err(Error::ModelFormat("bad magic".into()));
    }
    let version = read_u32(&mut input)?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::ModelFormat(format!("unsupported version {version}")));
    }
    let len = read_u32(&mut input)? as usize;
    let mut json = vec![0u8; len];
    input
        .read_exact(&mut json)
        .map_err(|e| Error::ModelFormat(format!("truncated header: {e}")))?;
    let h: Header = serde_json::from_slice(&json)
        .map_err(|e| Error::ModelFormat(format!("header: {e}")))?;
    if h.input_dim == 0 || h.hidden == 0 {
        return Err(Error::ModelFormat("zero-sized layer".into()));
    }
    let params = MlpParams {
        input_dim: h.input_dim,
        hidden: h.hidden,
        w1: read_f64s(&mut input, h.input_dim * h.hidden)?,
        b1: read_f64s(&mut input, h.hidden)?,
        w2: read_f64s(&mut input, h.hidden * CLASSES)?,
        b2: read_f64s(&mut input, CLASSES)?,
    };
    if !params.is_consistent() {
        return Err(Error::ModelFormat("non-finite parameter".into()));
    }
    let mut rest = Vec::new();
    input
        .read_to_end(&mut rest)
        .map_err(|e| Error::ModelFormat(e.to_string()))?;
    if !rest.is_empty() {
        return Err(Error::ModelFormat(format!("{} trailing bytes", rest.len())));
    }
    Ok(TrainedModel {
        params,
        config: h.config,
        best_epoch: h.best_epoch,
        dev_accuracy_history: h.dev_accuracy_history,
        feature_source: h.feature_source,
    })
}
