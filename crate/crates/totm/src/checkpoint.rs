//! Checkpoint serialization: a single JSON document holding a format
//! version, the model config, and every parameter tensor keyed by its
//! registry path. Tensors store their shape plus row-major values, so a
//! checkpoint is self-describing and survives config-independent tooling.

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc {
    format_version: u32,
    config: ModelConfig,
    tensors: BTreeMap<String, TensorEntry>,
}

/// Serializes params to the checkpoint document. BTreeMap keys keep the
/// output byte-stable across runs.
pub fn checkpoint_to_string(params: &ModelParams) -> Result<String> {
    let mut tensors = BTreeMap::new();
    params.for_each(&mut |path, shape, values| {
        tensors.insert(
            path.to_string(),
            TensorEntry {
                shape: shape.to_vec(),
                values: values.to_vec(),
            },
        );
    });
    let doc = CheckpointDoc {
        format_version: CHECKPOINT_VERSION,
        config: params.config.clone(),
        tensors,
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let text = checkpoint_to_string(params)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Parses and validates a checkpoint: version must match, the tensor set
/// must exactly cover the registry of the embedded config, every shape must
/// agree, and each kernel's diagonal tie must hold.
pub fn checkpoint_from_str(text: &str) -> Result<ModelParams> {
    let doc: CheckpointDoc =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("parse error: {e}")))?;
    if doc.format_version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format_version {} (expected {CHECKPOINT_VERSION})",
            doc.format_version
        )));
    }
    doc.config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("embedded config invalid: {e}")))?;

    let mut params = ModelParams::init(&doc.config, 0)?;
    let mut expected: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    params.for_each(&mut |path, shape, _| {
        expected.insert(path.to_string(), shape.to_vec());
    });
    for path in doc.tensors.keys() {
        if !expected.contains_key(path) {
            return Err(Error::Checkpoint(format!(
                "tensor '{path}' does not belong to this config"
            )));
        }
    }
    for (path, shape) in &expected {
        let entry = doc
            .tensors
            .get(path)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{path}'")))?;
        if &entry.shape != shape || entry.values.len() != shape.iter().product::<usize>() {
            return Err(Error::CheckpointShape {
                path: path.clone(),
                expected: shape.clone(),
                got: entry.shape.clone(),
            });
        }
    }
    params.for_each_mut(&mut |path, slice| {
        slice.copy_from_slice(&doc.tensors[path].values);
    });
    for (i, block) in params.blocks.iter().enumerate() {
        if let Some(global) = &block.global {
            if global.kernel.r[0] != global.kernel.c[0] {
                return Err(Error::Checkpoint(format!(
                    "block.{i}.toeplitz violates the lag-0 tie: c[0]={} r[0]={}",
                    global.kernel.c[0], global.kernel.r[0]
                )));
            }
        }
    }
    Ok(params)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let text = std::fs::read_to_string(path)?;
    checkpoint_from_str(&text)
}

/// The embedded config, without materializing the parameters. Used to check
/// a checkpoint against a run config before loading.
pub fn peek_config(text: &str) -> Result<ModelConfig> {
    #[derive(Deserialize)]
    struct Head {
        format_version: u32,
        config: ModelConfig,
    }
    let head: Head =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("parse error: {e}")))?;
    if head.format_version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format_version {} (expected {CHECKPOINT_VERSION})",
            head.format_version
        )));
    }
    Ok(head.config)
}
