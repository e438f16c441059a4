//! Run manifests written next to every command's outputs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{write_file, CliResult};

/// Git-style object hash: SHA-256 over `blob <len>\0<bytes>`, hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// The resolved configuration, as TOML.
    pub config: String,
    pub seeds: Vec<u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Hash of the checkpoint consumed or produced, if any.
    pub checkpoint_hash: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: String, seeds: Vec<u64>) -> Self {
        Self {
            command: command.to_string(),
            config,
            seeds,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            checkpoint_hash: None,
        }
    }

    pub fn input(&mut self, key: &str, path: &Path) -> &mut Self {
        self.inputs.insert(key.to_string(), path.display().to_string());
        self
    }

    pub fn output(&mut self, key: &str, path: &Path) -> &mut Self {
        self.outputs.insert(key.to_string(), path.display().to_string());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    /// Writes `<dir>/<command>.manifest.json`.
    pub fn write(&self, dir: &Path) -> CliResult<std::path::PathBuf> {
        let path = dir.join(format!("{}.manifest.json", self.command));
        write_file(&path, self.to_json().as_bytes())?;
        Ok(path)
    }
}
