//! PPO training augmented with the semantic clustering losses.
//!
//! One iteration collects a rollout, computes GAE, then runs several epochs
//! of minibatch updates on `L_DRL + f_control · (w_fdr · L_FDR + w_vq · L_VQ)`.
//! Every `control_period` iterations the control factor is refreshed from the
//! recent episode returns and unused codebook entries are re-seeded.

mod control;
mod gae;
mod ppo;
mod rollout;

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use control::{control_factor, ScoreHistory};
pub use gae::{compute_gae, normalize_advantages, Gae};
pub use ppo::{ppo_loss, total_loss, total_loss_tape, PpoCoefficients, PpoTargets, PpoTerms};
pub use rollout::{collect_rollouts, EnvTransition, RolloutBatch, VecEnv};

use crate::agent::{AgentModel, DEFAULT_FEATURE_DIM};
use crate::diffmath::{clip_grad_norm, Adam, ParamId, ParamStore, Tape};
use crate::env::{LevelConfig, MAX_SCORE};
use crate::error::{Error, Result};
use crate::semantic::{FdrPoint, SemanticConfig, SemanticModule};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
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
    /// Adam rate for the codebook embeddings alone.
    pub codebook_lr: f64,
    pub max_grad_norm: f64,
    pub iterations: usize,
    pub w_fdr: f64,
    pub w_vq: f64,
    pub alpha: f64,
    pub codebook_size: usize,
    pub s_highest: f64,
    pub control_period: usize,
    pub feature_dim: usize,
    /// Treat the feature similarities as a fixed target in the FDR loss.
    /// With gradient through both sides the features, and with them the FDR
    /// points, keep growing and the codebook cannot follow.
    pub stop_grad_p: bool,
    /// `false` trains a plain PPO agent with no semantic module at all.
    pub semantic: bool,
    pub seed: u64,
    pub level: LevelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_envs: 16,
            horizon: 128,
            minibatch_size: 256,
            epochs: 3,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            learning_rate: 5e-4,
            codebook_lr: 1e-2,
            max_grad_norm: 0.5,
            iterations: 300,
            w_fdr: 500.0,
            w_vq: 1.0,
            alpha: 20.0,
            codebook_size: 8,
            s_highest: MAX_SCORE,
            control_period: 50,
            feature_dim: DEFAULT_FEATURE_DIM,
            stop_grad_p: true,
            semantic: true,
            seed: 2021,
            level: LevelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.n_envs == 0 || self.horizon == 0 || self.minibatch_size == 0 || self.epochs == 0 {
            return bad("n_envs, horizon, minibatch_size and epochs must be positive");
        }
        if self.semantic && self.n_envs * self.horizon < 2 {
            return bad("semantic losses need at least two transitions per batch");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0) || !(self.learning_rate > 0.0) || !(self.codebook_lr > 0.0) || !(self.max_grad_norm > 0.0) {
            return bad("clip, learning rates and max_grad_norm must be positive");
        }
        if self.value_coef < 0.0 || self.entropy_coef < 0.0 || self.w_fdr < 0.0 || self.w_vq < 0.0 {
            return bad("loss weights must be non-negative");
        }
        if !(self.s_highest > 0.0) {
            return bad("s_highest must be positive");
        }
        if self.control_period == 0 || self.feature_dim == 0 {
            return bad("control_period and feature_dim must be positive");
        }
        self.semantic_config().validate()?;
        self.level.validate()
    }

    pub fn semantic_config(&self) -> SemanticConfig {
        SemanticConfig {
            alpha: self.alpha,
            codebook_size: self.codebook_size,
            stop_grad_p: self.stop_grad_p,
            ..SemanticConfig::default()
        }
    }

    pub fn coefficients(&self) -> PpoCoefficients {
        PpoCoefficients {
            clip: self.clip,
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    /// Mean of the last 100 episode returns; `None` before any episode ends.
    pub mean_return: Option<f64>,
    pub l_drl: f64,
    pub l_fdr: f64,
    pub l_vq: f64,
    pub f_control: f64,
    /// Fraction of this iteration's rollout states assigned to each code.
    pub code_occupancy: Vec<f64>,
}

/// Outcome of one codebook maintenance check.
#[derive(Debug, Clone, PartialEq)]
pub struct ReinitEvent {
    pub iteration: usize,
    pub usage: Vec<u64>,
    pub reseeded: Vec<usize>,
}

/// Snapshot of the minibatch that produced a non-finite loss.
#[derive(Debug, Clone, PartialEq)]
pub struct NonFiniteDump {
    pub iteration: usize,
    pub epoch: usize,
    pub minibatch: usize,
    pub l_drl: f64,
    pub l_fdr: f64,
    pub l_vq: f64,
    pub indices: Vec<usize>,
    pub actions: Vec<usize>,
    pub old_logprobs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("non-finite loss at iteration {}, epoch {}, minibatch {}", .0.iteration, .0.epoch, .0.minibatch)]
    NonFinite(Box<NonFiniteDump>),
}

/// Derives an independent RNG stream for one purpose from the run seed.
pub fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

const STREAM_INIT: u64 = 1;
const STREAM_LEVELS: u64 = 2;
const STREAM_ACT: u64 = 3;
const STREAM_SHUFFLE: u64 = 4;
const STREAM_REINIT: u64 = 5;

/// Builds the parameters of a fresh model exactly as training would.
pub fn init_model(config: &TrainConfig) -> Result<(ParamStore, AgentModel, Option<SemanticModule>)> {
    let mut rng = stream(config.seed, STREAM_INIT);
    let mut store = ParamStore::new();
    let codes = config.semantic.then_some(config.codebook_size);
    let agent = AgentModel::init(&mut store, config.feature_dim, codes, &mut rng)?;
    let semantic = if config.semantic {
        Some(SemanticModule::init(&mut store, config.feature_dim, config.semantic_config(), &mut rng)?)
    } else {
        None
    };
    Ok((store, agent, semantic))
}

/// Splits `0..n` into `parts` contiguous, near-equal chunks of a permutation.
fn minibatches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let n = order.len();
    let parts = (n / size).max(1);
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = n / parts + usize::from(p < n % parts);
        out.push(&order[start..start + len]);
        start += len;
    }
    out
}

pub struct Trainer {
    pub config: TrainConfig,
    pub store: ParamStore,
    pub agent: AgentModel,
    pub semantic: Option<SemanticModule>,
    pub history: ScoreHistory,
    pub f_control: f64,
    pub iteration: usize,
    pub reinit_log: Vec<ReinitEvent>,
    envs: VecEnv,
    optimizer: Adam,
    act_rng: ChaCha8Rng,
    shuffle_rng: ChaCha8Rng,
    reinit_rng: ChaCha8Rng,
    semantic_ids: Vec<ParamId>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let (store, agent, semantic) = init_model(&config)?;
        let mut semantic_ids = Vec::new();
        let mut optimizer = Adam::new(&store, config.learning_rate);
        if let Some(sem) = &semantic {
            optimizer.set_param_lr(sem.codebook, config.codebook_lr);
            semantic_ids.extend(sem.param_ids());
            semantic_ids.extend(agent.code_table);
        }
        Ok(Self {
            envs: VecEnv::new(config.n_envs, config.level.clone(), rand::RngCore::next_u64(&mut stream(config.seed, STREAM_LEVELS)))?,
            optimizer,
            act_rng: stream(config.seed, STREAM_ACT),
            shuffle_rng: stream(config.seed, STREAM_SHUFFLE),
            reinit_rng: stream(config.seed, STREAM_REINIT),
            history: ScoreHistory::new(),
            f_control: 0.0,
            iteration: 0,
            reinit_log: Vec::new(),
            semantic_ids,
            config,
            store,
            agent,
            semantic,
        })
    }

    /// Runs one collect → GAE → update iteration and returns its log row.
    pub fn step(&mut self) -> core::result::Result<MetricsRow, TrainError> {
        let cfg = self.config.clone();
        let batch = collect_rollouts(
            &mut self.envs,
            &self.agent,
            self.semantic.as_ref(),
            &self.store,
            cfg.horizon,
            &mut self.history,
            &mut self.act_rng,
        )?;
        let mut occupancy = vec![0.0; if self.semantic.is_some() { cfg.codebook_size } else { 0 }];
        if let Some(sem) = self.semantic.as_mut() {
            for &k in &batch.codes {
                sem.record_usage(k);
                occupancy[k] += 1.0;
            }
            occupancy.iter_mut().for_each(|o| *o /= batch.len() as f64);
        }

        let mut advantages = vec![0.0; batch.len()];
        let mut returns = vec![0.0; batch.len()];
        for e in 0..batch.n_envs {
            let r = batch.range(e);
            let g = compute_gae(
                &batch.rewards[r.clone()],
                &batch.values[r.clone()],
                &batch.dones[r.clone()],
                batch.bootstrap[e],
                cfg.gamma,
                cfg.gae_lambda,
            )?;
            advantages[r.clone()].copy_from_slice(&g.advantages);
            returns[r].copy_from_slice(&g.returns);
        }
        normalize_advantages(&mut advantages);

        let mut order: Vec<usize> = (0..batch.len()).collect();
        let (mut sum_drl, mut sum_fdr, mut sum_vq, mut updates) = (0.0, 0.0, 0.0, 0usize);
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut self.shuffle_rng);
            for (mb_index, idx) in minibatches(&order, cfg.minibatch_size).into_iter().enumerate() {
                let targets = PpoTargets {
                    actions: idx.iter().map(|&i| batch.actions[i]).collect(),
                    old_logprobs: idx.iter().map(|&i| batch.logprobs[i]).collect(),
                    advantages: idx.iter().map(|&i| advantages[i]).collect(),
                    returns: idx.iter().map(|&i| returns[i]).collect(),
                };
                let (l_drl, l_fdr, l_vq) = self.update(&batch, idx, &targets).map_err(|e| match e {
                    UpdateError::Core(e) => TrainError::Core(e),
                    UpdateError::NonFinite(l_drl, l_fdr, l_vq) => TrainError::NonFinite(Box::new(NonFiniteDump {
                        iteration: self.iteration + 1,
                        epoch,
                        minibatch: mb_index,
                        l_drl,
                        l_fdr,
                        l_vq,
                        indices: idx.to_vec(),
                        actions: targets.actions.clone(),
                        old_logprobs: targets.old_logprobs.clone(),
                        advantages: targets.advantages.clone(),
                        returns: targets.returns.clone(),
                    })),
                })?;
                sum_drl += l_drl;
                sum_fdr += l_fdr;
                sum_vq += l_vq;
                updates += 1;
            }
        }

        self.iteration += 1;
        let row_f_control = self.f_control;
        if self.iteration % cfg.control_period == 0 {
            self.f_control = control_factor(&self.history, cfg.s_highest)?;
            if let Some(sem) = self.semantic.as_mut() {
                let usage = sem.usage().to_vec();
                let reseeded = sem.reinit_dead_codes(&mut self.store, &batch.points, &mut self.reinit_rng)?;
                self.reinit_log.push(ReinitEvent {
                    iteration: self.iteration,
                    usage,
                    reseeded,
                });
            }
        }
        let n = updates.max(1) as f64;
        Ok(MetricsRow {
            iteration: self.iteration,
            mean_return: self.history.mean(),
            l_drl: sum_drl / n,
            l_fdr: sum_fdr / n,
            l_vq: sum_vq / n,
            f_control: row_f_control,
            code_occupancy: occupancy,
        })
    }

    fn update(&mut self, batch: &RolloutBatch, idx: &[usize], targets: &PpoTargets) -> core::result::Result<(f64, f64, f64), UpdateError> {
        let cfg = &self.config;
        let mut tape = Tape::new();
        let fw = self.agent.forward_tape(&self.store, self.semantic.as_ref(), &mut tape, batch.input_matrix(idx))?;
        let terms = ppo_loss(&mut tape, fw.logprobs, fw.values, targets, &cfg.coefficients())?;
        let l_drl = tape.value(terms.loss).item();
        let (loss, l_fdr, l_vq) = match &fw.semantic {
            Some(sem) => {
                let (lf, lv) = (tape.value(sem.fdr).item(), tape.value(sem.vq).item());
                let loss = total_loss_tape(&mut tape, terms.loss, sem.fdr, sem.vq, self.f_control, cfg.w_fdr, cfg.w_vq)?;
                (loss, lf, lv)
            }
            None => (terms.loss, 0.0, 0.0),
        };
        if !tape.value(loss).item().is_finite() || !l_fdr.is_finite() || !l_vq.is_finite() {
            return Err(UpdateError::NonFinite(l_drl, l_fdr, l_vq));
        }
        self.store.zero_grads();
        tape.backward(loss, &mut self.store)?;
        if self.f_control > 0.0 {
            clip_grad_norm(&mut self.store, cfg.max_grad_norm);
            self.optimizer.step(&mut self.store);
        } else {
            // Frozen parameters must not take part in the norm either, or the
            // clip would differ from a run without them.
            for &id in &self.semantic_ids {
                self.store.grad_mut(id).iter_mut().for_each(|g| *g = 0.0);
            }
            clip_grad_norm(&mut self.store, cfg.max_grad_norm);
            let frozen = &self.semantic_ids;
            self.optimizer.step_where(&mut self.store, |id| !frozen.contains(&id));
        }
        Ok((l_drl, l_fdr, l_vq))
    }

    /// Runs `config.iterations` iterations, handing every row to `on_row`.
    pub fn run(&mut self, mut on_row: impl FnMut(&Trainer, &MetricsRow)) -> core::result::Result<Vec<MetricsRow>, TrainError> {
        let mut rows = Vec::with_capacity(self.config.iterations);
        while self.iteration < self.config.iterations {
            let row = self.step()?;
            on_row(self, &row);
            rows.push(row);
        }
        Ok(rows)
    }

    /// Codebook embeddings, or `None` without the semantic module.
    pub fn codebook(&self) -> Option<Vec<FdrPoint>> {
        self.semantic.as_ref().map(|s| (0..s.codebook_size()).map(|k| s.embedding(&self.store, k)).collect())
    }
}

enum UpdateError {
    Core(Error),
    NonFinite(f64, f64, f64),
}

impl From<Error> for UpdateError {
    fn from(e: Error) -> Self {
        UpdateError::Core(e)
    }
}
