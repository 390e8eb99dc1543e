//! LAT1 checkpoints.
//!
//! Layout: the 4 magic bytes `LAT1`, a little-endian u64 header length, a
//! JSON header, then every tensor as little-endian f32 in directory order.

use std::fs;
use std::path::Path;

use lat_core::model::{check_params, param_specs, Params};
use lat_core::training::TrainConfig;
use lat_core::{io, Model, ModelConfig, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"LAT1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub version: u32,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    /// `init`, `supervised` or `lengthdrop`.
    pub phase: String,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub train_config: TrainConfig,
    pub phase: String,
    pub seed: u64,
}

fn bad(path: &Path, msg: impl Into<String>) -> CliError {
    CliError::Checkpoint {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut tensors = Vec::new();
        for (name, t) in self.model.params().iter() {
            let offset = payload.len();
            for &v in t.data() {
                let f = v as f32;
                if f64::from(f) != v && !v.is_nan() {
                    return Err(CliError::Usage(format!(
                        "parameter {name} holds a value that is not an f32: {v}"
                    )));
                }
                payload.extend_from_slice(&f.to_le_bytes());
            }
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
                bytes: payload.len() - offset,
            });
        }
        let header = Header {
            version: VERSION,
            model_config: self.model.config().clone(),
            train_config: self.train_config.clone(),
            phase: self.phase.clone(),
            seed: self.seed,
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(12 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad(path, "not a LAT1 checkpoint"));
        }
        let len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let body = &bytes[12..];
        if len > body.len() {
            return Err(bad(path, "truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..len])
            .map_err(|e| bad(path, format!("bad header: {e}")))?;
        if header.version != VERSION {
            return Err(bad(path, format!("unsupported version {}", header.version)));
        }
        header.model_config.validate()?;
        let payload = &body[len..];
        let specs = param_specs(&header.model_config);
        if specs.len() != header.tensors.len() {
            return Err(bad(
                path,
                format!(
                    "expected {} tensors, found {}",
                    specs.len(),
                    header.tensors.len()
                ),
            ));
        }
        let mut entries = Vec::with_capacity(specs.len());
        let mut end = 0;
        for ((name, shape), e) in specs.iter().zip(&header.tensors) {
            if &e.name != name || &e.shape != shape {
                return Err(bad(
                    path,
                    format!(
                        "tensor {} {:?} where {name} {shape:?} was expected",
                        e.name, e.shape
                    ),
                ));
            }
            let numel: usize = e.shape.iter().product();
            if e.bytes != 4 * numel {
                return Err(bad(
                    path,
                    format!("tensor {} has {} bytes for {numel} values", e.name, e.bytes),
                ));
            }
            let data = payload
                .get(e.offset..e.offset + e.bytes)
                .ok_or_else(|| bad(path, format!("tensor {} runs past the payload", e.name)))?
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect();
            end = end.max(e.offset + e.bytes);
            entries.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
        }
        if end != payload.len() {
            return Err(bad(path, "trailing bytes after the last tensor"));
        }
        let params = Params::new(entries);
        check_params(&header.model_config, &params)?;
        Ok(Checkpoint {
            model: Model::from_params(header.model_config, params)?,
            train_config: header.train_config,
            phase: header.phase,
            seed: header.seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
