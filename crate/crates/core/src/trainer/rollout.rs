use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::control::ScoreHistory;
use crate::agent::AgentModel;
use crate::diffmath::{Matrix, ParamStore};
use crate::env::{Action, EnvState, LevelConfig, Observation, OBS_LEN};
use crate::error::{Error, Result};
use crate::semantic::{FdrPoint, SemanticModule};

/// A set of independent MiniRun environments. Each reset draws the next level
/// seed from a shared stream, so the sequence of levels depends only on the
/// construction seed.
#[derive(Debug, Clone)]
pub struct VecEnv {
    config: LevelConfig,
    envs: Vec<EnvState>,
    obs: Vec<Observation>,
    episode_ids: Vec<u64>,
    next_episode: u64,
    level_rng: ChaCha8Rng,
}

/// What happened to one environment on one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvTransition {
    pub reward: f64,
    pub done: bool,
    /// Episode return, set when `done`.
    pub score: Option<f64>,
}

impl VecEnv {
    pub fn new(n: usize, config: LevelConfig, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("need at least one environment".into()));
        }
        config.validate()?;
        let mut level_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut envs = Vec::with_capacity(n);
        let mut obs = Vec::with_capacity(n);
        for _ in 0..n {
            let (s, o) = EnvState::reset(level_rng.random(), &config)?;
            envs.push(s);
            obs.push(o);
        }
        Ok(Self {
            config,
            envs,
            obs,
            episode_ids: (0..n as u64).collect(),
            next_episode: n as u64,
            level_rng,
        })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.obs
    }

    pub fn states(&self) -> &[EnvState] {
        &self.envs
    }

    /// Identifier of the episode currently running in each environment.
    pub fn episode_ids(&self) -> &[u64] {
        &self.episode_ids
    }

    /// Steps every environment; finished ones restart on a fresh level.
    pub fn step(&mut self, actions: &[Action]) -> Result<Vec<EnvTransition>> {
        if actions.len() != self.envs.len() {
            return Err(Error::Dimension {
                context: "vec env actions",
                expected: self.envs.len(),
                actual: actions.len(),
            });
        }
        let mut out = Vec::with_capacity(actions.len());
        for (i, &a) in actions.iter().enumerate() {
            let (o, step) = self.envs[i].step(a)?;
            if step.done {
                let score = self.envs[i].score;
                let (s, o) = EnvState::reset(self.level_rng.random(), &self.config)?;
                self.envs[i] = s;
                self.obs[i] = o;
                self.episode_ids[i] = self.next_episode;
                self.next_episode += 1;
                out.push(EnvTransition {
                    reward: step.reward,
                    done: true,
                    score: Some(score),
                });
            } else {
                self.obs[i] = o;
                out.push(EnvTransition {
                    reward: step.reward,
                    done: false,
                    score: None,
                });
            }
        }
        Ok(out)
    }
}

/// Experience from `n_envs × horizon` steps, stored env-major:
/// entry `e * horizon + t` is step `t` of environment `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub n_envs: usize,
    pub horizon: usize,
    pub observations: Vec<Observation>,
    pub actions: Vec<usize>,
    pub logprobs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// VQ codes; empty for an unconditioned agent.
    pub codes: Vec<usize>,
    pub features: Matrix,
    /// FDR points; empty for an unconditioned agent.
    pub points: Vec<FdrPoint>,
    /// Value of the state after the last step of each environment.
    pub bootstrap: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn range(&self, env: usize) -> core::ops::Range<usize> {
        env * self.horizon..(env + 1) * self.horizon
    }

    pub fn input_matrix(&self, indices: &[usize]) -> Matrix {
        let mut x = Matrix::zeros(indices.len(), OBS_LEN);
        for (r, &i) in indices.iter().enumerate() {
            self.observations[i].write_input(x.row_mut(r));
        }
        x
    }
}

/// Runs the policy (no exploration mixing) for `horizon` steps in every
/// environment. Completed episode returns go into `history`.
pub fn collect_rollouts<R: Rng + ?Sized>(
    envs: &mut VecEnv,
    agent: &AgentModel,
    semantic: Option<&SemanticModule>,
    store: &ParamStore,
    horizon: usize,
    history: &mut ScoreHistory,
    rng: &mut R,
) -> Result<RolloutBatch> {
    if horizon == 0 {
        return Err(Error::Config("horizon must be positive".into()));
    }
    let n = envs.len();
    let total = n * horizon;
    let mut batch = RolloutBatch {
        n_envs: n,
        horizon,
        observations: vec![Observation::empty(); total],
        actions: vec![0; total],
        logprobs: vec![0.0; total],
        values: vec![0.0; total],
        rewards: vec![0.0; total],
        dones: vec![false; total],
        codes: if semantic.is_some() { vec![0; total] } else { Vec::new() },
        features: Matrix::zeros(total, agent.feature_dim),
        points: if semantic.is_some() { vec![[0.0; 2]; total] } else { Vec::new() },
        bootstrap: vec![0.0; n],
    };
    for t in 0..horizon {
        let acts = agent.act(store, semantic, envs.observations(), rng, 0.0)?;
        for (e, a) in acts.iter().enumerate() {
            let i = e * horizon + t;
            batch.observations[i] = envs.observations()[e].clone();
            batch.actions[i] = a.action.index();
            batch.logprobs[i] = a.logprob;
            batch.values[i] = a.value;
            batch.features.row_mut(i).copy_from_slice(&a.feature);
            if let (Some(k), Some(p)) = (a.code, a.point) {
                batch.codes[i] = k;
                batch.points[i] = p;
            }
        }
        let actions: Vec<Action> = acts.iter().map(|a| a.action).collect();
        for (e, tr) in envs.step(&actions)?.into_iter().enumerate() {
            let i = e * horizon + t;
            batch.rewards[i] = tr.reward;
            batch.dones[i] = tr.done;
            if let Some(score) = tr.score {
                history.push(score);
            }
        }
    }
    let mut x = Matrix::zeros(n, OBS_LEN);
    for (r, o) in envs.observations().iter().enumerate() {
        o.write_input(x.row_mut(r));
    }
    batch.bootstrap = agent.evaluate(store, semantic, &x)?.values;
    Ok(batch)
}
