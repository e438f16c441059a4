//! Feature extractor, code-table conditioning and the policy/value heads.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::diffmath::{affine_forward, log_softmax_in_place, relu_forward, Matrix, NodeId, ParamId, ParamStore, Tape};
use crate::env::{Action, Observation, OBS_LEN};
use crate::error::{Error, Result};
use crate::semantic::{FdrPoint, SemanticModule};
#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

pub const HIDDEN1: usize = 256;
pub const HIDDEN2: usize = 128;
pub const DEFAULT_FEATURE_DIM: usize = 64;

/// Parameter handles of the agent network.
///
/// `code_table` is present only when the agent is conditioned on VQ codes.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentModel {
    pub feature_dim: usize,
    pub l1_w: ParamId,
    pub l1_b: ParamId,
    pub l2_w: ParamId,
    pub l2_b: ParamId,
    pub l3_w: ParamId,
    pub l3_b: ParamId,
    pub pi_w: ParamId,
    pub pi_b: ParamId,
    pub v_w: ParamId,
    pub v_b: ParamId,
    pub code_table: Option<ParamId>,
}

/// Parameter names of the agent network, excluding the code table.
pub const PARAM_NAMES: [&str; 10] = [
    "agent.extractor.l1.weight",
    "agent.extractor.l1.bias",
    "agent.extractor.l2.weight",
    "agent.extractor.l2.bias",
    "agent.extractor.l3.weight",
    "agent.extractor.l3.bias",
    "agent.policy.weight",
    "agent.policy.bias",
    "agent.value.weight",
    "agent.value.bias",
];

impl AgentModel {
    pub const CODE_TABLE: &'static str = "agent.code_table";

    /// Registers the agent parameters. Extractor weights are He-normal, the
    /// policy head starts near uniform, biases and the code table start at zero.
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, feature_dim: usize, codebook_size: Option<usize>, rng: &mut R) -> Result<Self> {
        if feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        let mut normal = |std: f64, n: usize| -> Vec<f64> {
            let d = Normal::new(0.0, std).expect("positive std");
            (0..n).map(|_| d.sample(rng)).collect()
        };
        let he = |fan_in: usize| (2.0 / fan_in as f64).sqrt();
        let l1_w = store.insert(PARAM_NAMES[0], &[HIDDEN1, OBS_LEN], normal(he(OBS_LEN), HIDDEN1 * OBS_LEN))?;
        let l1_b = store.zeros(PARAM_NAMES[1], &[HIDDEN1])?;
        let l2_w = store.insert(PARAM_NAMES[2], &[HIDDEN2, HIDDEN1], normal(he(HIDDEN1), HIDDEN2 * HIDDEN1))?;
        let l2_b = store.zeros(PARAM_NAMES[3], &[HIDDEN2])?;
        let l3_w = store.insert(PARAM_NAMES[4], &[feature_dim, HIDDEN2], normal((1.0 / HIDDEN2 as f64).sqrt(), feature_dim * HIDDEN2))?;
        let l3_b = store.zeros(PARAM_NAMES[5], &[feature_dim])?;
        let pi_w = store.insert(PARAM_NAMES[6], &[Action::COUNT, feature_dim], normal(0.01, Action::COUNT * feature_dim))?;
        let pi_b = store.zeros(PARAM_NAMES[7], &[Action::COUNT])?;
        let v_w = store.insert(PARAM_NAMES[8], &[1, feature_dim], normal((1.0 / feature_dim as f64).sqrt(), feature_dim))?;
        let v_b = store.zeros(PARAM_NAMES[9], &[1])?;
        let code_table = match codebook_size {
            Some(k) => Some(store.zeros(Self::CODE_TABLE, &[k, feature_dim])?),
            None => None,
        };
        Ok(Self {
            feature_dim,
            l1_w,
            l1_b,
            l2_w,
            l2_b,
            l3_w,
            l3_b,
            pi_w,
            pi_b,
            v_w,
            v_b,
            code_table,
        })
    }

    /// Looks up existing parameters by name and checks their shapes.
    pub fn bind(store: &ParamStore, codebook_size: Option<usize>) -> Result<Self> {
        let ids: Vec<ParamId> = PARAM_NAMES.iter().map(|n| store.require(n)).collect::<Result<_>>()?;
        let feature_dim = store.shape(ids[4])[0];
        let code_table = match codebook_size {
            Some(_) => Some(store.require(Self::CODE_TABLE)?),
            None => None,
        };
        let m = Self {
            feature_dim,
            l1_w: ids[0],
            l1_b: ids[1],
            l2_w: ids[2],
            l2_b: ids[3],
            l3_w: ids[4],
            l3_b: ids[5],
            pi_w: ids[6],
            pi_b: ids[7],
            v_w: ids[8],
            v_b: ids[9],
            code_table,
        };
        let mut expect: Vec<(ParamId, Vec<usize>)> = alloc::vec![
            (m.l1_w, alloc::vec![HIDDEN1, OBS_LEN]),
            (m.l2_w, alloc::vec![HIDDEN2, HIDDEN1]),
            (m.l3_w, alloc::vec![feature_dim, HIDDEN2]),
            (m.pi_w, alloc::vec![Action::COUNT, feature_dim]),
            (m.v_w, alloc::vec![1, feature_dim]),
        ];
        if let (Some(t), Some(k)) = (m.code_table, codebook_size) {
            expect.push((t, alloc::vec![k, feature_dim]));
        }
        for (id, shape) in expect {
            if store.shape(id) != shape.as_slice() {
                return Err(Error::Config(format!("unexpected shape {:?} for `{}`", store.shape(id), store.name(id))));
            }
        }
        Ok(m)
    }

    pub fn extractor_ids(&self) -> [ParamId; 6] {
        [self.l1_w, self.l1_b, self.l2_w, self.l2_b, self.l3_w, self.l3_b]
    }

    /// Feature extractor on a batch of flattened observations.
    pub fn features_batch(&self, store: &ParamStore, obs: &Matrix) -> Result<Matrix> {
        if obs.cols() != OBS_LEN {
            return Err(Error::Dimension {
                context: "extractor input",
                expected: OBS_LEN,
                actual: obs.cols(),
            });
        }
        let h = relu_forward(&affine_forward(obs, store.values(self.l1_w), store.values(self.l1_b), HIDDEN1));
        let h = relu_forward(&affine_forward(&h, store.values(self.l2_w), store.values(self.l2_b), HIDDEN2));
        Ok(affine_forward(&h, store.values(self.l3_w), store.values(self.l3_b), self.feature_dim))
    }

    pub fn extract_features(&self, store: &ParamStore, obs: &Observation) -> Result<Vec<f64>> {
        self.features_batch(store, &Matrix::row_vector(obs.to_input()))
            .map(Matrix::into_vec)
    }

    pub fn features_tape(&self, store: &ParamStore, tape: &mut Tape, obs: NodeId) -> Result<NodeId> {
        let h = tape.affine(store, obs, self.l1_w, self.l1_b)?;
        let h = tape.relu(h);
        let h = tape.affine(store, h, self.l2_w, self.l2_b)?;
        let h = tape.relu(h);
        tape.affine(store, h, self.l3_w, self.l3_b)
    }

    fn table(&self) -> Result<ParamId> {
        self.code_table.ok_or(Error::Usage("agent has no code table"))
    }

    /// `feature + table[k]`.
    pub fn integrate_code(&self, store: &ParamStore, feature: &[f64], k: usize) -> Result<Vec<f64>> {
        let t = self.table()?;
        let rows = store.shape(t)[0];
        if k >= rows {
            return Err(Error::Index { index: k, len: rows });
        }
        if feature.len() != self.feature_dim {
            return Err(Error::Dimension {
                context: "integrate_code feature",
                expected: self.feature_dim,
                actual: feature.len(),
            });
        }
        let row = &store.values(t)[k * self.feature_dim..(k + 1) * self.feature_dim];
        Ok(feature.iter().zip(row).map(|(f, e)| f + e).collect())
    }

    pub fn integrate_tape(&self, store: &ParamStore, tape: &mut Tape, features: NodeId, codes: &[usize]) -> Result<NodeId> {
        let rows = tape.gather_rows(store, self.table()?, codes)?;
        tape.add(features, rows)
    }

    pub fn policy_logits(&self, store: &ParamStore, conditioned: &[f64]) -> Result<Vec<f64>> {
        self.head(store, conditioned, self.pi_w, self.pi_b, Action::COUNT)
    }

    pub fn value(&self, store: &ParamStore, conditioned: &[f64]) -> Result<f64> {
        Ok(self.head(store, conditioned, self.v_w, self.v_b, 1)?[0])
    }

    fn head(&self, store: &ParamStore, x: &[f64], w: ParamId, b: ParamId, out: usize) -> Result<Vec<f64>> {
        if x.len() != self.feature_dim || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("conditioned feature"));
        }
        Ok(affine_forward(&Matrix::row_vector(x.to_vec()), store.values(w), store.values(b), out).into_vec())
    }

    /// Full forward pass on a tape.
    pub fn forward_tape(&self, store: &ParamStore, semantic: Option<&SemanticModule>, tape: &mut Tape, obs: Matrix) -> Result<TapeForward> {
        let x = tape.input(obs);
        let features = self.features_tape(store, tape, x)?;
        let (conditioned, semantic_out) = match semantic {
            Some(sem) => {
                let losses = sem.losses(store, tape, features)?;
                let cond = self.integrate_tape(store, tape, features, &losses.codes)?;
                (cond, Some(losses))
            }
            None => (features, None),
        };
        let logits = tape.affine(store, conditioned, self.pi_w, self.pi_b)?;
        let logprobs = tape.log_softmax(logits)?;
        let values = tape.affine(store, conditioned, self.v_w, self.v_b)?;
        Ok(TapeForward {
            features,
            logprobs,
            values,
            semantic: semantic_out,
        })
    }

    /// Tape-free forward pass on a batch; shares kernels with the tape so the
    /// two paths agree bitwise.
    pub fn evaluate(&self, store: &ParamStore, semantic: Option<&SemanticModule>, obs: &Matrix) -> Result<BatchEval> {
        let features = self.features_batch(store, obs)?;
        let n = features.rows();
        let (conditioned, points, codes) = match semantic {
            Some(sem) => {
                let points = sem.fdr_forward_batch(store, &features)?;
                let codes: Vec<usize> = (0..n).map(|r| sem.nearest(store, [points.get(r, 0), points.get(r, 1)])).collect();
                let t = self.table()?;
                let table = store.values(t);
                let mut cond = features.clone();
                for (r, &k) in codes.iter().enumerate() {
                    let row = &table[k * self.feature_dim..(k + 1) * self.feature_dim];
                    for (c, e) in cond.row_mut(r).iter_mut().zip(row) {
                        *c += e;
                    }
                }
                (cond, Some(points), codes)
            }
            None => (features.clone(), None, Vec::new()),
        };
        let mut logprobs = affine_forward(&conditioned, store.values(self.pi_w), store.values(self.pi_b), Action::COUNT);
        if !logprobs.all_finite() {
            return Err(Error::Numeric("policy logits"));
        }
        for r in 0..n {
            log_softmax_in_place(logprobs.row_mut(r));
        }
        let values = affine_forward(&conditioned, store.values(self.v_w), store.values(self.v_b), 1).into_vec();
        Ok(BatchEval {
            features,
            points,
            codes,
            logprobs,
            values,
        })
    }

    /// Chooses actions for a batch of observations.
    ///
    /// With probability `epsilon` the sampled action is replaced by a uniform
    /// random one; the returned log-probability is always the policy's
    /// log-probability of the action actually taken.
    pub fn act<R: Rng + ?Sized>(&self, store: &ParamStore, semantic: Option<&SemanticModule>, obs: &[Observation], rng: &mut R, epsilon: f64) -> Result<Vec<ActOutput>> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::Config(format!("epsilon must lie in [0, 1], got {epsilon}")));
        }
        let mut x = Matrix::zeros(obs.len(), OBS_LEN);
        for (r, o) in obs.iter().enumerate() {
            o.write_input(x.row_mut(r));
        }
        let eval = self.evaluate(store, semantic, &x)?;
        let mut out = Vec::with_capacity(obs.len());
        for r in 0..obs.len() {
            let lp = eval.logprobs.row(r);
            let mut a = sample_categorical(lp, rng.random::<f64>());
            if epsilon > 0.0 && rng.random::<f64>() < epsilon {
                a = rng.random_range(0..Action::COUNT);
            }
            let (k, point) = match &eval.points {
                Some(p) => (Some(eval.codes[r]), Some([p.get(r, 0), p.get(r, 1)])),
                None => (None, None),
            };
            out.push(ActOutput {
                action: Action::from_index(a)?,
                logprob: lp[a],
                value: eval.values[r],
                code: k,
                point,
                feature: eval.features.row(r).to_vec(),
            });
        }
        Ok(out)
    }
}

/// Inverse-CDF draw from log-probabilities given `u ∈ [0, 1)`.
pub fn sample_categorical(logprobs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, lp) in logprobs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    logprobs.len() - 1
}

#[derive(Debug, Clone)]
pub struct TapeForward {
    pub features: NodeId,
    pub logprobs: NodeId,
    pub values: NodeId,
    pub semantic: Option<crate::semantic::SemanticLosses>,
}

#[derive(Debug, Clone)]
pub struct BatchEval {
    pub features: Matrix,
    pub points: Option<Matrix>,
    pub codes: Vec<usize>,
    pub logprobs: Matrix,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActOutput {
    pub action: Action,
    pub logprob: f64,
    pub value: f64,
    pub code: Option<usize>,
    pub point: Option<FdrPoint>,
    pub feature: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic::SemanticConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ParamStore, AgentModel, SemanticModule) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let agent = AgentModel::init(&mut store, 16, Some(8), &mut rng).unwrap();
        let sem = SemanticModule::init(&mut store, 16, SemanticConfig::default(), &mut rng).unwrap();
        (store, agent, sem)
    }

    #[test]
    fn zero_observation_zero_biases_gives_zero_feature() {
        let (store, agent, _) = setup();
        let f = agent.extract_features(&store, &Observation::empty()).unwrap();
        assert!(f.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn integrate_with_zero_table_is_identity() {
        let (mut store, agent, _) = setup();
        let f: Vec<f64> = (0..16).map(|i| i as f64 * 0.37 - 2.0).collect();
        assert_eq!(agent.integrate_code(&store, &f, 5).unwrap(), f);
        let t = agent.code_table.unwrap();
        let row: Vec<f64> = (0..16).map(|i| (i as f64).sin()).collect();
        store.values_mut(t)[5 * 16..6 * 16].copy_from_slice(&row);
        assert_eq!(agent.integrate_code(&store, &[0.0; 16], 5).unwrap(), row);
        assert!(matches!(agent.integrate_code(&store, &f, 8), Err(Error::Index { index: 8, len: 8 })));
    }

    #[test]
    fn zero_policy_head_is_uniform() {
        let (mut store, agent, _) = setup();
        store.values_mut(agent.pi_w).iter_mut().for_each(|v| *v = 0.0);
        let logits = agent.policy_logits(&store, &[0.5; 16]).unwrap();
        assert_eq!(logits, alloc::vec![0.0; 4]);
        store.values_mut(agent.v_w).iter_mut().for_each(|v| *v = 0.0);
        assert_eq!(agent.value(&store, &[0.5; 16]).unwrap(), 0.0);
    }

    #[test]
    fn tape_and_batch_paths_agree_bitwise() {
        let (store, agent, sem) = setup();
        let mut x = Matrix::zeros(2, crate::env::OBS_LEN);
        for (r, seed) in [3u64, 4].into_iter().enumerate() {
            let (_, obs) = crate::env::EnvState::reset(seed, &Default::default()).unwrap();
            obs.write_input(x.row_mut(r));
        }
        let eval = agent.evaluate(&store, Some(&sem), &x).unwrap();
        let mut tape = Tape::new();
        let fw = agent.forward_tape(&store, Some(&sem), &mut tape, x).unwrap();
        assert_eq!(tape.value(fw.logprobs), &eval.logprobs);
        assert_eq!(tape.value(fw.values).data(), eval.values.as_slice());
        assert_eq!(fw.semantic.unwrap().codes, eval.codes);
    }

    #[test]
    fn categorical_sampler_inverts_cdf() {
        let lp = [0.1f64.ln(), 0.2f64.ln(), 0.3f64.ln(), 0.4f64.ln()];
        assert_eq!(sample_categorical(&lp, 0.05), 0);
        assert_eq!(sample_categorical(&lp, 0.25), 1);
        assert_eq!(sample_categorical(&lp, 0.55), 2);
        assert_eq!(sample_categorical(&lp, 0.999), 3);
    }
}
