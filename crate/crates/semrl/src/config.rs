//! The plain-text run configuration (TOML).
//!
//! Every key is optional; missing keys take the built-in defaults. Unknown
//! keys are rejected so typos do not silently fall back to a default.
//!
//! ```toml
//! seed = 2021
//!
//! [level]
//! width = 32
//! height = 12
//! gap_prob = 0.03
//! max_jump = 2
//! step_cap = 256
//!
//! [train]
//! iterations = 300
//! w_fdr = 500.0
//! w_vq = 1.0
//!
//! [collect]
//! envs = 16
//! steps = 500
//! epsilon = 0.2
//! collect_prob = 0.8
//! ```

use std::path::Path;

use semrl_core::analysis::{CollectConfig, TsneConfig};
use semrl_core::env::LevelConfig;
use semrl_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{read_file, CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LevelSection {
    pub width: usize,
    pub height: usize,
    pub gap_prob: f64,
    pub max_jump: usize,
    pub step_cap: usize,
    pub height_change_prob: f64,
}

impl Default for LevelSection {
    fn default() -> Self {
        LevelConfig::default().into()
    }
}

impl From<LevelConfig> for LevelSection {
    fn from(c: LevelConfig) -> Self {
        Self {
            width: c.width,
            height: c.height,
            gap_prob: c.gap_prob,
            max_jump: c.max_jump,
            step_cap: c.step_cap,
            height_change_prob: c.height_change_prob,
        }
    }
}

impl From<&LevelSection> for LevelConfig {
    fn from(s: &LevelSection) -> Self {
        Self {
            width: s.width,
            height: s.height,
            gap_prob: s.gap_prob,
            max_jump: s.max_jump,
            step_cap: s.step_cap,
            height_change_prob: s.height_change_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: usize,
    pub n_envs: usize,
    pub horizon: usize,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub learning_rate: f64,
    pub codebook_lr: f64,
    pub max_grad_norm: f64,
    pub feature_dim: usize,
    /// Train with the semantic module; `false` gives plain PPO.
    pub semantic: bool,
    pub w_fdr: f64,
    pub w_vq: f64,
    pub alpha: f64,
    pub codebook_size: usize,
    pub s_highest: f64,
    pub control_period: usize,
    pub stop_grad_p: bool,
    /// Write an intermediate checkpoint every this many iterations; 0 = final only.
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            iterations: t.iterations,
            n_envs: t.n_envs,
            horizon: t.horizon,
            minibatch_size: t.minibatch_size,
            epochs: t.epochs,
            gamma: t.gamma,
            gae_lambda: t.gae_lambda,
            clip: t.clip,
            value_coef: t.value_coef,
            entropy_coef: t.entropy_coef,
            learning_rate: t.learning_rate,
            codebook_lr: t.codebook_lr,
            max_grad_norm: t.max_grad_norm,
            feature_dim: t.feature_dim,
            semantic: t.semantic,
            w_fdr: t.w_fdr,
            w_vq: t.w_vq,
            alpha: t.alpha,
            codebook_size: t.codebook_size,
            s_highest: t.s_highest,
            control_period: t.control_period,
            stop_grad_p: t.stop_grad_p,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectSection {
    pub envs: usize,
    pub steps: usize,
    pub epsilon: f64,
    pub collect_prob: f64,
}

impl Default for CollectSection {
    fn default() -> Self {
        let c = CollectConfig::default();
        Self {
            envs: c.n_envs,
            steps: c.steps,
            epsilon: c.epsilon,
            collect_prob: c.collect_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneSection {
    pub perplexity: f64,
    pub iterations: usize,
}

impl Default for TsneSection {
    fn default() -> Self {
        let t = TsneConfig::default();
        Self {
            perplexity: t.perplexity,
            iterations: t.iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub level: LevelSection,
    pub train: TrainSection,
    pub collect: CollectSection,
    pub tsne: TsneSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: TrainConfig::default().seed,
            level: LevelSection::default(),
            train: TrainSection::default(),
            collect: CollectSection::default(),
            tsne: TsneSection::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = read_file(path)?;
        let cfg = Self::parse(&text).map_err(|message| CliError::Config {
            path: path.to_path_buf(),
            message,
        })?;
        cfg.validate().map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    /// Loads `path` if given, otherwise the defaults.
    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> semrl_core::Result<()> {
        self.train_config().validate()?;
        self.collect_config().validate()
    }

    pub fn level_config(&self) -> LevelConfig {
        (&self.level).into()
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            n_envs: t.n_envs,
            horizon: t.horizon,
            minibatch_size: t.minibatch_size,
            epochs: t.epochs,
            gamma: t.gamma,
            gae_lambda: t.gae_lambda,
            clip: t.clip,
            value_coef: t.value_coef,
            entropy_coef: t.entropy_coef,
            learning_rate: t.learning_rate,
            codebook_lr: t.codebook_lr,
            max_grad_norm: t.max_grad_norm,
            iterations: t.iterations,
            w_fdr: t.w_fdr,
            w_vq: t.w_vq,
            alpha: t.alpha,
            codebook_size: t.codebook_size,
            s_highest: t.s_highest,
            control_period: t.control_period,
            feature_dim: t.feature_dim,
            stop_grad_p: t.stop_grad_p,
            semantic: t.semantic,
            seed: self.seed,
            level: self.level_config(),
        }
    }

    pub fn collect_config(&self) -> CollectConfig {
        CollectConfig {
            n_envs: self.collect.envs,
            steps: self.collect.steps,
            epsilon: self.collect.epsilon,
            collect_prob: self.collect.collect_prob,
            seed: self.seed,
            level: self.level_config(),
        }
    }

    pub fn tsne_config(&self) -> TsneConfig {
        TsneConfig {
            perplexity: self.tsne.perplexity,
            iterations: self.tsne.iterations,
            seed: self.seed,
            ..TsneConfig::default()
        }
    }

    /// Content hash of the resolved configuration.
    pub fn hash(&self) -> String {
        crate::manifest::content_hash(self.to_toml().as_bytes())
    }
}
