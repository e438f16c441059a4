//! The collected state-set file and replay traces.
//!
//! A state-set file is JSON:
//!
//! ```json
//! {
//!   "checkpoint_hash": "...",
//!   "codebook_size": 8,
//!   "records": [
//!     { "observation": "<hex>", "feature": [...], "point": [x, y], "code": 3,
//!       "env": 0, "step": 12, "episode": 40 }
//!   ],
//!   "episodes": [
//!     { "episode": 40, "env": 0, "level_seed": 123, "codes": [...], "actions": [...], "score": 10.0 }
//!   ]
//! }
//! ```
//!
//! `observation` packs the 576 binary cells eight to a byte, most significant
//! bit first. The rendered image is recomputed from it on load.
//!
//! A replay trace is a JSON list of `{ "seed": level_seed, "actions": [...] }`,
//! enough to re-run any episode with the same level config.

use std::path::Path;

use semrl_core::analysis::{EpisodeTrace, StateRecord, StateSet};
use semrl_core::env::{render_pixels, Action, EnvState, LevelConfig, Observation, OBS_LEN};
use serde::{Deserialize, Serialize};

use crate::error::{read_file, CliError, CliResult};

pub fn pack_observation(obs: &Observation) -> String {
    let mut bytes = vec![0u8; OBS_LEN.div_ceil(8)];
    for (i, &c) in obs.cells().iter().enumerate() {
        if c != 0 {
            bytes[i / 8] |= 0x80 >> (i % 8);
        }
    }
    hex::encode(bytes)
}

pub fn unpack_observation(text: &str) -> Result<Observation, String> {
    let bytes = hex::decode(text).map_err(|e| e.to_string())?;
    if bytes.len() != OBS_LEN.div_ceil(8) {
        return Err(format!("observation has {} bytes, expected {}", bytes.len(), OBS_LEN.div_ceil(8)));
    }
    let cells: Vec<u8> = (0..OBS_LEN).map(|i| (bytes[i / 8] >> (7 - i % 8)) & 1).collect();
    Observation::from_cells(&cells).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordFile {
    pub observation: String,
    pub feature: Vec<f64>,
    pub point: [f64; 2],
    pub code: usize,
    pub env: usize,
    pub step: usize,
    pub episode: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeFile {
    pub episode: u64,
    pub env: usize,
    pub level_seed: u64,
    pub codes: Vec<usize>,
    pub actions: Vec<usize>,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSetFile {
    pub checkpoint_hash: String,
    pub codebook_size: usize,
    pub records: Vec<RecordFile>,
    pub episodes: Vec<EpisodeFile>,
}

impl StateSetFile {
    pub fn from_set(set: &StateSet, checkpoint_hash: &str, codebook_size: usize) -> Self {
        Self {
            checkpoint_hash: checkpoint_hash.to_string(),
            codebook_size,
            records: set
                .records
                .iter()
                .map(|r| RecordFile {
                    observation: pack_observation(&r.observation),
                    feature: r.feature.clone(),
                    point: r.point,
                    code: r.code,
                    env: r.env,
                    step: r.step,
                    episode: r.episode,
                })
                .collect(),
            episodes: set
                .episodes
                .iter()
                .map(|e| EpisodeFile {
                    episode: e.episode,
                    env: e.env,
                    level_seed: e.level_seed,
                    codes: e.codes.clone(),
                    actions: e.actions.clone(),
                    score: e.score,
                })
                .collect(),
        }
    }

    pub fn to_set(&self) -> Result<StateSet, String> {
        let mut records = Vec::with_capacity(self.records.len());
        for (i, r) in self.records.iter().enumerate() {
            let observation = unpack_observation(&r.observation).map_err(|e| format!("record {i}: {e}"))?;
            if r.code >= self.codebook_size {
                return Err(format!("record {i}: code {} outside codebook of {}", r.code, self.codebook_size));
            }
            records.push(StateRecord {
                image: render_pixels(&observation),
                observation,
                feature: r.feature.clone(),
                point: r.point,
                code: r.code,
                env: r.env,
                step: r.step,
                episode: r.episode,
            });
        }
        let episodes = self
            .episodes
            .iter()
            .map(|e| EpisodeTrace {
                episode: e.episode,
                env: e.env,
                level_seed: e.level_seed,
                codes: e.codes.clone(),
                actions: e.actions.clone(),
                score: e.score,
            })
            .collect();
        Ok(StateSet { records, episodes })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("state set serializes")
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        serde_json::from_str(&read_file(path)?).map_err(|e| CliError::Format {
            what: "state set",
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayEntry {
    pub seed: u64,
    pub actions: Vec<usize>,
}

pub fn replay_trace(set: &StateSet) -> Vec<ReplayEntry> {
    set.episodes
        .iter()
        .map(|e| ReplayEntry {
            seed: e.level_seed,
            actions: e.actions.clone(),
        })
        .collect()
}

/// Outcome of re-running one replay entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Replayed {
    pub observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    pub done: bool,
    pub score: f64,
}

/// Re-runs `entry` on a fresh level. `observations[t]` is the state in which
/// action `t` was taken.
pub fn replay(entry: &ReplayEntry, level: &LevelConfig) -> semrl_core::Result<Replayed> {
    let (mut state, mut obs) = EnvState::reset(entry.seed, level)?;
    let mut out = Replayed {
        observations: Vec::with_capacity(entry.actions.len()),
        rewards: Vec::with_capacity(entry.actions.len()),
        done: false,
        score: 0.0,
    };
    for &a in &entry.actions {
        out.observations.push(obs);
        let (next, step) = state.step(Action::from_index(a)?)?;
        out.rewards.push(step.reward);
        obs = next;
        if step.done {
            out.done = true;
            break;
        }
    }
    out.score = state.score;
    Ok(out)
}
