//! JSON checkpoints.
//!
//! ```json
//! {
//!   "params": { "agent.policy.bias": { "shape": [4], "values": [0.0, 0.0, 0.0, 0.0] }, ... },
//!   "metadata": { "iteration": 300, "seed": 2021, "config_hash": "..." }
//! }
//! ```
//!
//! Values are row-major. Loading rebuilds the model layout from the run
//! configuration and refuses unknown names, missing names and any shape that
//! differs from the layout.

use std::collections::BTreeMap;
use std::path::Path;

use semrl_core::agent::{AgentModel, PARAM_NAMES};
use semrl_core::diffmath::ParamStore;
use semrl_core::semantic::SemanticModule;
use semrl_core::trainer::{init_model, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{read_file, write_file, CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub iteration: usize,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub params: BTreeMap<String, Tensor>,
    pub metadata: Metadata,
}

/// A model restored from a checkpoint.
pub struct LoadedModel {
    pub store: ParamStore,
    pub agent: AgentModel,
    pub semantic: Option<SemanticModule>,
    pub metadata: Metadata,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, metadata: Metadata) -> Self {
        let params = store
            .ids()
            .map(|id| {
                (
                    store.name(id).to_string(),
                    Tensor {
                        shape: store.shape(id).to_vec(),
                        values: store.values(id).to_vec(),
                    },
                )
            })
            .collect();
        Self { params, metadata }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        write_file(path, self.to_json().as_bytes())
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        Self::from_json(&read_file(path)?).map_err(|message| CliError::Format {
            what: "checkpoint",
            path: path.to_path_buf(),
            message,
        })
    }

    /// Whether this checkpoint carries the semantic module.
    pub fn has_semantic(&self) -> bool {
        self.params.contains_key(SemanticModule::CODEBOOK)
    }

    /// Restores the parameters into the layout described by `config`.
    ///
    /// The semantic switch, feature width and codebook size are taken from
    /// the checkpoint itself; `alpha` and the rest come from `config`.
    pub fn restore(&self, config: &TrainConfig) -> Result<LoadedModel, String> {
        let mut cfg = config.clone();
        cfg.semantic = self.has_semantic();
        if let Some(t) = self.params.get(PARAM_NAMES[4]) {
            cfg.feature_dim = *t.shape.first().ok_or("empty shape for feature layer")?;
        }
        if let Some(t) = self.params.get(SemanticModule::CODEBOOK) {
            cfg.codebook_size = *t.shape.first().ok_or("empty shape for codebook")?;
        }
        let (mut store, _, _) = init_model(&cfg).map_err(|e| e.to_string())?;
        for name in self.params.keys() {
            if store.id(name).is_none() {
                return Err(format!("unknown parameter `{name}`"));
            }
        }
        let names: Vec<String> = store.ids().map(|id| store.name(id).to_string()).collect();
        for name in names {
            let t = self.params.get(&name).ok_or_else(|| format!("missing parameter `{name}`"))?;
            if t.values.iter().any(|v| !v.is_finite()) {
                return Err(format!("non-finite value in `{name}`"));
            }
            store.load(&name, &t.shape, &t.values).map_err(|e| e.to_string())?;
        }
        let codes = cfg.semantic.then_some(cfg.codebook_size);
        let agent = AgentModel::bind(&store, codes).map_err(|e| e.to_string())?;
        let semantic = if cfg.semantic {
            Some(SemanticModule::bind(&store, cfg.feature_dim, cfg.semantic_config()).map_err(|e| e.to_string())?)
        } else {
            None
        };
        Ok(LoadedModel {
            store,
            agent,
            semantic,
            metadata: self.metadata.clone(),
        })
    }
}

/// Reads and restores a checkpoint file; returns the model and the file's content hash.
pub fn load_checkpoint(path: &Path, config: &TrainConfig) -> CliResult<(LoadedModel, String)> {
    let text = read_file(path)?;
    let hash = crate::manifest::content_hash(text.as_bytes());
    let ckpt = Checkpoint::from_json(&text).map_err(|message| CliError::Format {
        what: "checkpoint",
        path: path.to_path_buf(),
        message,
    })?;
    let model = ckpt.restore(config).map_err(|message| CliError::Format {
        what: "checkpoint",
        path: path.to_path_buf(),
        message,
    })?;
    Ok((model, hash))
}
