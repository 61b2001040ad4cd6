//! Trainable parameters as concatenated LIMT blobs plus a JSON index.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tensor};

pub const CHECKPOINT_BIN: &str = "checkpoint.bin";
pub const CHECKPOINT_INDEX: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub offset: usize,
    pub length: usize,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointIndex {
    pub format: String,
    pub params: IndexMap<String, IndexEntry>,
}

pub fn save_checkpoint<P: ParamSet + ?Sized>(dir: &Path, params: &P) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut blob = Vec::new();
    let mut index = CheckpointIndex {
        format: "LIMT".into(),
        params: IndexMap::new(),
    };
    params.for_each_param(&mut |name, t| {
        let bytes = t.to_limt_bytes();
        index.params.insert(
            name.to_string(),
            IndexEntry {
                offset: blob.len(),
                length: bytes.len(),
                shape: t.shape().to_vec(),
            },
        );
        blob.extend_from_slice(&bytes);
    });
    std::fs::write(dir.join(CHECKPOINT_BIN), blob)?;
    std::fs::write(dir.join(CHECKPOINT_INDEX), serde_json::to_string_pretty(&index)? + "\n")?;
    Ok(())
}

/// Overwrites every parameter of `params` from the checkpoint in `dir`.
/// Names and shapes must match exactly.
pub fn load_checkpoint<P: ParamSet + ?Sized>(dir: &Path, params: &mut P) -> Result<()> {
    let index: CheckpointIndex = serde_json::from_str(&std::fs::read_to_string(dir.join(CHECKPOINT_INDEX))?)?;
    let blob = std::fs::read(dir.join(CHECKPOINT_BIN))?;
    let names = params.param_names();
    if names.len() != index.params.len() || names.iter().any(|n| !index.params.contains_key(n)) {
        return Err(Error::format("checkpoint", "parameter names do not match the model"));
    }
    let mut loaded = IndexMap::new();
    for (name, e) in &index.params {
        let bytes = blob
            .get(e.offset..e.offset + e.length)
            .ok_or_else(|| Error::format("checkpoint", format!("`{name}` runs past the end of the blob")))?;
        let t = Tensor::from_limt_bytes(bytes)?;
        if t.shape() != e.shape.as_slice() {
            return Err(Error::format("checkpoint", format!("`{name}` shape disagrees with index")));
        }
        loaded.insert(name.clone(), t);
    }
    let mut mismatch = None;
    params.for_each_param_mut(&mut |name, t| {
        let src = &loaded[name];
        if src.shape() == t.shape() {
            t.values_mut().copy_from_slice(src.values());
        } else {
            mismatch = Some(name.to_string());
        }
    });
    match mismatch {
        Some(name) => Err(Error::format("checkpoint", format!("`{name}` has the wrong shape"))),
        None => Ok(()),
    }
}
