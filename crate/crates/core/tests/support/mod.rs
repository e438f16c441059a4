//! Fixtures shared by the integration tests.
#![allow(dead_code)]

pub mod grad;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use semrl_core::agent::AgentModel;
use semrl_core::diffmath::{Adam, Matrix, ParamStore, Tape};
use semrl_core::env::{Action, EnvState, LevelConfig, OBS_LEN};
use semrl_core::semantic::{SemanticConfig, SemanticModule};
use semrl_core::trainer::PpoTargets;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` observations from distinct levels, each a few random steps in.
pub fn observations(n: usize, seed: u64) -> Matrix {
    let mut r = rng(seed);
    let cfg = LevelConfig::default();
    let mut x = Matrix::zeros(n, OBS_LEN);
    for i in 0..n {
        let (mut s, mut obs) = EnvState::reset(seed * 1000 + i as u64, &cfg).unwrap();
        for _ in 0..r.random_range(0..6) {
            let (o, out) = s.step(Action::ALL[r.random_range(0..4)]).unwrap();
            if out.done {
                break;
            }
            obs = o;
        }
        obs.write_input(x.row_mut(i));
    }
    x
}

pub struct AgentFixture {
    pub store: ParamStore,
    pub agent: AgentModel,
    pub semantic: SemanticModule,
    pub obs: Matrix,
    pub targets: PpoTargets,
}

/// Smallest |pre-activation| over every ReLU the fixture passes through.
pub fn relu_margin(f: &AgentFixture) -> f64 {
    let s = &f.store;
    let mut tape = Tape::new();
    let x = tape.input(f.obs.clone());
    let h1 = tape.affine(s, x, f.agent.l1_w, f.agent.l1_b).unwrap();
    let a1 = tape.relu(h1);
    let h2 = tape.affine(s, a1, f.agent.l2_w, f.agent.l2_b).unwrap();
    let a2 = tape.relu(h2);
    let feats = tape.affine(s, a2, f.agent.l3_w, f.agent.l3_b).unwrap();
    let h3 = tape.affine(s, feats, f.semantic.fdr_l1_w, f.semantic.fdr_l1_b).unwrap();
    [h1, h2, h3]
        .iter()
        .flat_map(|n| tape.value(*n).data().to_vec())
        .fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

/// A semantic agent with a non-zero code table and PPO targets whose
/// behavior log-probabilities sit away from the clip boundaries.
///
/// Central differences straddling a ReLU kink measure neither one-sided
/// derivative, so candidates with any pre-activation within `1e-4` of zero
/// are drawn again.
pub fn agent_fixture(seed: u64, feature_dim: usize) -> AgentFixture {
    (0..)
        .map(|attempt| agent_candidate(seed * 1000 + attempt, feature_dim))
        .find(|f| relu_margin(f) > 1e-4)
        .unwrap()
}

fn agent_candidate(seed: u64, feature_dim: usize) -> AgentFixture {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let agent = AgentModel::init(&mut store, feature_dim, Some(8), &mut r).unwrap();
    let semantic = SemanticModule::init(&mut store, feature_dim, SemanticConfig::default(), &mut r).unwrap();
    let table = agent.code_table.unwrap();
    let noise = Normal::new(0.0, 0.1).unwrap();
    store.values_mut(table).iter_mut().for_each(|v| *v = noise.sample(&mut r));
    let obs = observations(8, seed);
    let eval = agent.evaluate(&store, Some(&semantic), &obs).unwrap();
    let actions: Vec<usize> = (0..8).map(|_| r.random_range(0..4)).collect();
    let old_logprobs = actions
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            // Ratios of roughly 0.6 or 1.5: well inside either clipped region.
            let shift = if i % 2 == 0 { 0.5 } else { -0.4 };
            eval.logprobs.get(i, a) + shift
        })
        .collect();
    let targets = PpoTargets {
        actions,
        old_logprobs,
        advantages: (0..8).map(|i| if i % 3 == 0 { -1.0 } else { 0.7 } + 0.1 * i as f64).collect(),
        returns: (0..8).map(|i| i as f64 - 3.0).collect(),
    };
    AgentFixture {
        store,
        agent,
        semantic,
        obs,
        targets,
    }
}

/// Rows drawn from four well-separated Gaussians in `dim` dimensions,
/// `per_cluster` rows each, cluster by cluster.
pub fn four_gaussians(per_cluster: usize, dim: usize, spread: f64, noise: f64, seed: u64) -> Matrix {
    let mut r = rng(seed);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let centers: Vec<Vec<f64>> = (0..4).map(|_| (0..dim).map(|_| spread * unit.sample(&mut r)).collect()).collect();
    let mut data = Vec::with_capacity(4 * per_cluster * dim);
    for c in &centers {
        for _ in 0..per_cluster {
            data.extend(c.iter().map(|m| m + noise * unit.sample(&mut r)));
        }
    }
    Matrix::from_vec(4 * per_cluster, dim, data).unwrap()
}

/// A frozen random ReLU layer standing in for the feature extractor.
pub fn frozen_features(input: &Matrix, out_dim: usize, seed: u64) -> Matrix {
    let mut r = rng(seed);
    let w = Normal::new(0.0, (2.0 / input.cols() as f64).sqrt()).unwrap();
    let weights: Vec<f64> = (0..out_dim * input.cols()).map(|_| w.sample(&mut r)).collect();
    let mut out = Matrix::zeros(input.rows(), out_dim);
    for i in 0..input.rows() {
        for o in 0..out_dim {
            let v: f64 = input.row(i).iter().zip(&weights[o * input.cols()..(o + 1) * input.cols()]).map(|(a, b)| a * b).sum();
            out.set(i, o, v.max(0.0));
        }
    }
    out
}

/// Σ over rows of the squared distance between the FDR point and its nearest embedding.
pub fn assignment_distance(sem: &SemanticModule, store: &ParamStore, features: &Matrix) -> f64 {
    let points = sem.fdr_forward_batch(store, features).unwrap();
    (0..points.rows())
        .map(|i| {
            let p = [points.get(i, 0), points.get(i, 1)];
            let e = sem.embedding(store, sem.nearest(store, p));
            (p[0] - e[0]).powi(2) + (p[1] - e[1]).powi(2)
        })
        .sum()
}

/// Trains the FDR net and codebook jointly on fixed features for `steps`
/// Adam steps of `w_fdr · L_FDR + w_vq · L_VQ`. Returns the assignment
/// distance before and after.
///
/// Cluster centers have std 0.3 and noise 0.03, which puts the frozen
/// features at roughly the scale the extractor produces at initialization.
pub fn densify(seed: u64, steps: usize, w_fdr: f64, w_vq: f64) -> (f64, f64) {
    densify_with(seed, steps, w_fdr, w_vq, 0.3, 0.03, 3e-2)
}

pub fn densify_with(seed: u64, steps: usize, w_fdr: f64, w_vq: f64, spread: f64, noise: f64, lr: f64) -> (f64, f64) {
    let inputs = four_gaussians(16, 8, spread, noise, seed);
    let features = frozen_features(&inputs, 32, seed + 100);
    let mut store = ParamStore::new();
    let sem = SemanticModule::init(&mut store, 32, SemanticConfig::default(), &mut rng(seed + 200)).unwrap();
    let before = assignment_distance(&sem, &store, &features);
    let mut adam = Adam::new(&store, lr);
    for _ in 0..steps {
        let mut tape = Tape::new();
        let x = tape.input(features.clone());
        let l = sem.losses(&store, &mut tape, x).unwrap();
        let a = tape.scale(l.fdr, w_fdr);
        let b = tape.scale(l.vq, w_vq);
        let loss = tape.add(a, b).unwrap();
        store.zero_grads();
        tape.backward(loss, &mut store).unwrap();
        adam.step(&mut store);
    }
    (before, assignment_distance(&sem, &store, &features))
}

/// Three tight clusters of 20 points in 10 dimensions, centers 10 apart.
pub fn three_gaussians(seed: u64) -> (Matrix, Vec<usize>) {
    three_gaussians_sized(20, seed)
}

pub fn three_gaussians_sized(per_cluster: usize, seed: u64) -> (Matrix, Vec<usize>) {
    let mut r = rng(seed);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for c in 0..3 {
        for _ in 0..per_cluster {
            for d in 0..10 {
                let center = if d == c { 10.0 / 2f64.sqrt() } else { 0.0 };
                data.push(center + noise.sample(&mut r));
            }
            labels.push(c);
        }
    }
    (Matrix::from_vec(3 * per_cluster, 10, data).unwrap(), labels)
}
