//! Model file: a safetensors archive of little-endian f64 tensors keyed by
//! dotted path, with the model description as JSON metadata.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use super::model::{build_model, HybridConfig, HybridModel, ModelKind, Trainable};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const METADATA_KEY: &str = "qtransfer";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: ModelKind,
    config: HybridConfig,
    seed: u64,
    trainable: Trainable,
}

pub fn model_to_bytes(model: &HybridModel) -> Result<Vec<u8>> {
    let header = Header {
        format_version: FORMAT_VERSION,
        kind: model.kind(),
        config: model.config().clone(),
        seed: model.seed(),
        trainable: model.trainable(),
    };
    let meta = serde_json::to_string(&header).map_err(|e| Error::State(format!("model header: {e}")))?;
    let blobs: Vec<(String, Vec<usize>, Vec<u8>)> = model
        .named_tensors()
        .into_iter()
        .map(|t| (t.name, t.shape, t.data.iter().flat_map(|v| v.to_le_bytes()).collect()))
        .collect();
    let views = blobs
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(Dtype::F64, shape.clone(), bytes)
                .map(|v| (name.as_str(), v))
                .map_err(|e| Error::State(format!("tensor {name}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    safetensors::serialize(views, Some(HashMap::from([(METADATA_KEY.to_string(), meta)])))
        .map_err(|e| Error::State(format!("model serialization: {e}")))
}

pub fn model_from_bytes(bytes: &[u8], path: &Path) -> Result<HybridModel> {
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let (_, metadata) = SafeTensors::read_metadata(bytes).map_err(|e| bad(e.to_string()))?;
    let meta = metadata
        .metadata()
        .as_ref()
        .and_then(|m| m.get(METADATA_KEY))
        .ok_or_else(|| bad("missing model header".into()))?;
    let header: Header = serde_json::from_str(meta).map_err(|e| bad(format!("model header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {}", header.format_version)));
    }
    let archive = SafeTensors::deserialize(bytes).map_err(|e| bad(e.to_string()))?;
    let mut model = build_model(header.kind, &header.config, header.seed).map_err(|e| bad(e.to_string()))?;
    let expected: Vec<(String, Vec<usize>)> = model.named_tensors().into_iter().map(|t| (t.name, t.shape)).collect();
    if archive.len() != expected.len() {
        return Err(bad(format!("{} tensors stored, {} expected", archive.len(), expected.len())));
    }
    for ((name, slot), (_, shape)) in model.tensors_mut().into_iter().zip(&expected) {
        let view = archive.tensor(&name).map_err(|_| bad(format!("missing tensor {name}")))?;
        if view.dtype() != Dtype::F64 || view.shape() != shape.as_slice() {
            return Err(bad(format!("tensor {name} has dtype {:?} shape {:?}", view.dtype(), view.shape())));
        }
        for (dst, chunk) in slot.iter_mut().zip(view.data().chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    }
    model.set_trainable(header.trainable);
    Ok(model)
}

pub fn save_model(model: &HybridModel, path: &Path) -> Result<()> {
    fs::write(path, model_to_bytes(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<HybridModel> {
    model_from_bytes(&fs::read(path)?, path)
}
