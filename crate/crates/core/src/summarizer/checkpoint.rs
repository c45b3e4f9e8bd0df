//! Checkpoint directory layout:
//!
//! * `config.json`: model config, vocabulary and a tensor index
//! * `weights.bin`: every tensor as little-endian `f64`, row-major, in index order

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::model::{DialogModel, DialogModelConfig};
use super::tokenizer::Vocab;
use super::SummarizerError;

pub const CONFIG_FILE: &str = "config.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub dtype: String,
    pub model: DialogModelConfig,
    pub vocab: Vec<String>,
    pub tensors: Vec<TensorEntry>,
}

fn ckpt_err(e: impl std::fmt::Display) -> SummarizerError {
    SummarizerError::Checkpoint(e.to_string())
}

pub fn save_checkpoint(model: &DialogModel, dir: &Path) -> Result<(), SummarizerError> {
    std::fs::create_dir_all(dir)?;
    let mut tensors = Vec::new();
    let mut blob = Vec::with_capacity(model.params().num_scalars() * 8);
    for (_, name, value) in model.params().iter() {
        tensors.push(TensorEntry { name: name.to_string(), rows: value.nrows(), cols: value.ncols() });
        for x in value.iter() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format_version: FORMAT_VERSION,
        dtype: "f64-le".into(),
        model: model.config.clone(),
        vocab: model.vocab.tokens().to_vec(),
        tensors,
    };
    crate::util::atomic_write(&dir.join(WEIGHTS_FILE), &blob)?;
    let json = serde_json::to_vec_pretty(&manifest).map_err(ckpt_err)?;
    crate::util::atomic_write(&dir.join(CONFIG_FILE), &json)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<DialogModel, SummarizerError> {
    let cfg_path = dir.join(CONFIG_FILE);
    let raw = std::fs::read(&cfg_path)
        .map_err(|e| SummarizerError::ModelUnavailable(format!("{}: {e}", cfg_path.display())))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&raw).map_err(ckpt_err)?;
    if manifest.format_version != FORMAT_VERSION || manifest.dtype != "f64-le" {
        return Err(ckpt_err(format!(
            "unsupported checkpoint format {} / {}",
            manifest.format_version, manifest.dtype
        )));
    }
    let blob = std::fs::read(dir.join(WEIGHTS_FILE))
        .map_err(|e| SummarizerError::ModelUnavailable(format!("{}: {e}", dir.join(WEIGHTS_FILE).display())))?;
    let expected: usize = manifest.tensors.iter().map(|t| t.rows * t.cols * 8).sum();
    if blob.len() != expected {
        return Err(ckpt_err(format!("weights blob has {} bytes, index expects {expected}", blob.len())));
    }
    let vocab = Vocab::from_tokens(manifest.vocab);
    let mut model = DialogModel::new(manifest.model, vocab, 0)?;
    if manifest.tensors.len() != model.params().len() {
        return Err(ckpt_err(format!(
            "checkpoint has {} tensors, model expects {}",
            manifest.tensors.len(),
            model.params().len()
        )));
    }
    let mut offset = 0;
    for entry in &manifest.tensors {
        let id = model.params().id(&entry.name).ok_or_else(|| ckpt_err(format!("unknown tensor {}", entry.name)))?;
        let n = entry.rows * entry.cols;
        let values: Vec<f64> = blob[offset..offset + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        offset += n * 8;
        let value = Array2::from_shape_vec((entry.rows, entry.cols), values).map_err(ckpt_err)?;
        let slot = model.params_mut().get_mut(id);
        if slot.dim() != value.dim() {
            return Err(ckpt_err(format!("tensor {} has shape {:?}, expected {:?}", entry.name, value.dim(), slot.dim())));
        }
        *slot = value;
    }
    Ok(model)
}
