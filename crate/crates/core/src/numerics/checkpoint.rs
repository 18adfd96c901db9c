//! Parameter checkpoints: versioned JSON mapping name -> shape -> values.
//!
//! Values round-trip bit-exactly (the JSON writer emits the shortest
//! representation that parses back to the same f64). A `meta` section
//! carries caller-defined model metadata.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use super::NumericsError;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    rng_seed: u64,
    meta: serde_json::Value,
    params: BTreeMap<String, ParamRecord>,
}

#[derive(Serialize, Deserialize)]
struct ParamRecord {
    shape: Vec<usize>,
    values: Vec<f64>,
}

pub fn save(
    params: &ParamStore,
    meta: serde_json::Value,
    path: &Path,
) -> Result<(), NumericsError> {
    let records: BTreeMap<String, ParamRecord> = params
        .iter()
        .map(|(name, value, _)| {
            (
                name.to_string(),
                ParamRecord {
                    shape: value.shape().to_vec(),
                    values: value.values().to_vec(),
                },
            )
        })
        .collect();
    let file = CheckpointFile {
        format_version: CHECKPOINT_FORMAT_VERSION,
        rng_seed: params.rng_seed(),
        meta,
        params: records,
    };
    let body = serde_json::to_string(&file)
        .map_err(|e| NumericsError::Checkpoint(format!("serialize: {e}")))?;
    fs::write(path, body)
        .map_err(|e| NumericsError::Checkpoint(format!("write {}: {e}", path.display())))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore, serde_json::Value), NumericsError> {
    let body = fs::read_to_string(path)
        .map_err(|e| NumericsError::Checkpoint(format!("read {}: {e}", path.display())))?;
    let file: CheckpointFile = serde_json::from_str(&body)
        .map_err(|e| NumericsError::Checkpoint(format!("parse {}: {e}", path.display())))?;
    if file.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(NumericsError::Checkpoint(format!(
            "unsupported format version {} (expected {})",
            file.format_version, CHECKPOINT_FORMAT_VERSION
        )));
    }
    let mut params = ParamStore::new(file.rng_seed);
    for (name, record) in file.params {
        params.insert(&name, Tensor::new(record.shape, record.values)?)?;
    }
    Ok((params, file.meta))
}
