use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Record of one command invocation, written last and atomically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: String,
    /// SHA-256 over every input file, in argument order.
    pub input_hash: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seconds: f64,
}

/// Hashes each file's name length, name and content so reordered or renamed
/// inputs give a different digest.
pub fn hash_inputs(paths: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        let name = p.to_string_lossy();
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        let bytes = std::fs::read(p).map_err(|e| CliError::io(p, e))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        lat_core::io::write_atomic(&path, &json)?;
        Ok(path)
    }
}
