//! Safetensors checkpoints.
//!
//! The archive header lists every weight (name, shape, dtype); its
//! metadata holds a single entry, keyed by the format version, whose value
//! is the model config as JSON. One entry keeps the header bytes stable,
//! since safetensors writes metadata in hash-map order.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{Device, Tensor};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::Params;

pub const FORMAT_VERSION: &str = "dtecnet-v1";

pub fn encode(params: &Params, model: &ModelConfig) -> Result<Vec<u8>> {
    let vars = params.named_vars();
    let tensors: Vec<(String, Tensor)> = vars.into_iter().map(|(k, v)| (k, v.as_tensor().clone())).collect();
    let meta = HashMap::from([(FORMAT_VERSION.to_string(), serde_json::to_string(model)?)]);
    safetensors::serialize(tensors.iter().map(|(k, t)| (k.as_str(), t)), Some(meta))
        .map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save(path: impl AsRef<Path>, params: &Params, model: &ModelConfig) -> Result<()> {
    let bytes = encode(params, model)?;
    let path = path.as_ref();
    // write-then-rename so a crash never leaves a torn checkpoint
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub tensors: HashMap<String, Tensor>,
}

pub fn decode(bytes: &[u8], device: &Device) -> Result<Checkpoint> {
    let (_, header) = safetensors::SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let meta = header.metadata().clone().unwrap_or_default();
    let Some(config) = meta.get(FORMAT_VERSION) else {
        let mut keys: Vec<&String> = meta.keys().collect();
        keys.sort();
        return Err(Error::Checkpoint(format!("not a {FORMAT_VERSION} checkpoint (metadata keys {keys:?})")));
    };
    let model: ModelConfig = serde_json::from_str(config)?;
    let tensors = candle_core::safetensors::load_buffer(bytes, device)?;
    Ok(Checkpoint { model, tensors })
}

pub fn load(path: impl AsRef<Path>, device: &Device) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    decode(&bytes, device)
}
