//! Evaluation tools: state collection, cluster statistics, episode
//! segmentation, the FDR subset-stability check and an exact t-SNE baseline.

mod tsne;

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use tsne::{exact_tsne, TsneConfig, TsneResult, MAX_TSNE_POINTS};

use crate::agent::AgentModel;
use crate::diffmath::{Matrix, ParamStore};
use crate::env::{render_pixels, EnvState, LevelConfig, Observation, IMAGE_LEN, OBS_LEN};
use crate::error::{Error, Result};
use crate::semantic::{FdrPoint, SemanticModule};
#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

pub const DEFAULT_EPSILON: f64 = 0.2;
pub const DEFAULT_COLLECT_PROB: f64 = 0.8;
pub const DEFAULT_COLLECT_ENVS: usize = 16;
pub const DEFAULT_COLLECT_STEPS: usize = 500;
pub const PAPER_COLLECT_ENVS: usize = 64;
pub const PAPER_COLLECT_STEPS: usize = 500;

/// One recorded state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateRecord {
    pub observation: Observation,
    pub image: Vec<f64>,
    pub feature: Vec<f64>,
    pub point: FdrPoint,
    pub code: usize,
    pub env: usize,
    pub step: usize,
    pub episode: u64,
}

/// The full code sequence of one episode, including steps that were not
/// sampled into the record list.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub episode: u64,
    pub env: usize,
    pub level_seed: u64,
    pub codes: Vec<usize>,
    pub actions: Vec<usize>,
    /// `None` when the episode was still running when collection stopped.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StateSet {
    pub records: Vec<StateRecord>,
    pub episodes: Vec<EpisodeTrace>,
}

impl StateSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn codes(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.code).collect()
    }

    pub fn episode_codes(&self) -> Vec<Vec<usize>> {
        self.episodes.iter().map(|e| e.codes.clone()).collect()
    }

    pub fn feature_matrix(&self) -> Matrix {
        let dim = self.records.first().map_or(0, |r| r.feature.len());
        let mut m = Matrix::zeros(self.records.len(), dim);
        for (i, r) in self.records.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&r.feature);
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectConfig {
    pub n_envs: usize,
    pub steps: usize,
    pub epsilon: f64,
    pub collect_prob: f64,
    pub seed: u64,
    pub level: LevelConfig,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            n_envs: DEFAULT_COLLECT_ENVS,
            steps: DEFAULT_COLLECT_STEPS,
            epsilon: DEFAULT_EPSILON,
            collect_prob: DEFAULT_COLLECT_PROB,
            seed: 0,
            level: LevelConfig::default(),
        }
    }
}

impl CollectConfig {
    pub fn paper_protocol(mut self) -> Self {
        self.n_envs = PAPER_COLLECT_ENVS;
        self.steps = PAPER_COLLECT_STEPS;
        self.collect_prob = DEFAULT_COLLECT_PROB;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_envs == 0 || self.steps == 0 {
            return Err(Error::Config("collection needs at least one env and one step".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) || !(0.0..=1.0).contains(&self.collect_prob) {
            return Err(Error::Config("epsilon and collect_prob must lie in [0, 1]".into()));
        }
        self.level.validate()
    }
}

/// Runs the checkpointed agent with ε-random actions and records each visited
/// state independently with probability `collect_prob`.
///
/// Levels, actions and the record coin use separate streams, so changing
/// `collect_prob` never changes the trajectories.
pub fn collect_states(agent: &AgentModel, semantic: &SemanticModule, store: &ParamStore, config: &CollectConfig) -> Result<StateSet> {
    config.validate()?;
    let mut level_rng = crate::trainer::stream(config.seed, 11);
    let mut act_rng = crate::trainer::stream(config.seed, 12);
    let mut coin_rng = crate::trainer::stream(config.seed, 13);

    let mut envs = Vec::with_capacity(config.n_envs);
    let mut obs = Vec::with_capacity(config.n_envs);
    let mut open: Vec<EpisodeTrace> = Vec::with_capacity(config.n_envs);
    let mut ep_steps = vec![0usize; config.n_envs];
    for e in 0..config.n_envs {
        let level_seed = level_rng.random();
        let (s, o) = EnvState::reset(level_seed, &config.level)?;
        envs.push(s);
        obs.push(o);
        open.push(EpisodeTrace {
            episode: e as u64,
            env: e,
            level_seed,
            codes: Vec::new(),
            actions: Vec::new(),
            score: None,
        });
    }
    let mut next_episode = config.n_envs as u64;
    let mut set = StateSet::default();

    for _ in 0..config.steps {
        let acts = agent.act(store, Some(semantic), &obs, &mut act_rng, config.epsilon)?;
        for (e, a) in acts.into_iter().enumerate() {
            let (code, point) = match (a.code, a.point) {
                (Some(k), Some(p)) => (k, p),
                _ => return Err(Error::Usage("collection needs a semantic agent")),
            };
            open[e].codes.push(code);
            open[e].actions.push(a.action.index());
            if coin_rng.random::<f64>() < config.collect_prob {
                set.records.push(StateRecord {
                    image: render_pixels(&obs[e]),
                    observation: obs[e].clone(),
                    feature: a.feature,
                    point,
                    code,
                    env: e,
                    step: ep_steps[e],
                    episode: open[e].episode,
                });
            }
            let (o, out) = envs[e].step(a.action)?;
            ep_steps[e] += 1;
            if out.done {
                let level_seed = level_rng.random();
                let finished = core::mem::replace(
                    &mut open[e],
                    EpisodeTrace {
                        episode: next_episode,
                        env: e,
                        level_seed,
                        codes: Vec::new(),
                        actions: Vec::new(),
                        score: None,
                    },
                );
                set.episodes.push(EpisodeTrace {
                    score: Some(envs[e].score),
                    ..finished
                });
                next_episode += 1;
                ep_steps[e] = 0;
                let (s, o) = EnvState::reset(level_seed, &config.level)?;
                envs[e] = s;
                obs[e] = o;
            } else {
                obs[e] = o;
            }
        }
    }
    set.episodes.extend(open.into_iter().filter(|t| !t.codes.is_empty()));
    set.episodes.sort_by_key(|t| t.episode);
    Ok(set)
}

/// Recomputes feature, point and code of every record from its observation
/// and returns the indices of records that disagree.
pub fn inconsistent_records(agent: &AgentModel, semantic: &SemanticModule, store: &ParamStore, states: &StateSet) -> Result<Vec<usize>> {
    let mut bad = Vec::new();
    for (i, r) in states.records.iter().enumerate() {
        let x = Matrix::row_vector(r.observation.to_input());
        let eval = agent.evaluate(store, Some(semantic), &x)?;
        let p = eval.points.as_ref().map(|p| [p.get(0, 0), p.get(0, 1)]);
        if eval.features.row(0) != r.feature.as_slice() || p != Some(r.point) || eval.codes[0] != r.code || render_pixels(&r.observation) != r.image {
            bad.push(i);
        }
    }
    Ok(bad)
}

/// Fraction of temporally adjacent pairs whose codes differ, pooled over all
/// sequences. Pairs never cross sequence boundaries.
pub fn transition_probability(sequences: &[Vec<usize>]) -> Result<f64> {
    let (mut changes, mut pairs) = (0usize, 0usize);
    for s in sequences {
        for w in s.windows(2) {
            pairs += 1;
            changes += usize::from(w[0] != w[1]);
        }
    }
    if pairs == 0 {
        return Err(Error::Undefined("transition probability needs at least one adjacent pair"));
    }
    Ok(changes as f64 / pairs as f64)
}

/// A maximal run of one code: steps `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub code: usize,
    pub start: usize,
    pub end: usize,
}

pub fn segment_episode(codes: &[usize]) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    for (t, &k) in codes.iter().enumerate() {
        match out.last_mut() {
            Some(s) if s.code == k => s.end = t + 1,
            _ => out.push(Segment {
                code: k,
                start: t,
                end: t + 1,
            }),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSummary {
    pub code: usize,
    pub count: usize,
    /// Empty when the cluster has no states.
    pub mean_image: Vec<f64>,
    pub pixel_mean: f64,
    pub pixel_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterStats {
    pub clusters: Vec<ClusterSummary>,
    /// Unweighted average over non-empty clusters.
    pub pooled_pixel_mean: f64,
    pub pooled_pixel_std: f64,
    pub empty_clusters: Vec<usize>,
    pub transition_probability: Option<f64>,
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Per-cluster mean images and L2 pixel distances to them.
///
/// `images` and `codes` are parallel; the standard deviation is the
/// population one. `sequences` feeds the transition probability; when no
/// sequence has a pair it is reported as `None`.
pub fn cluster_stats(images: &[Vec<f64>], codes: &[usize], codebook_size: usize, sequences: &[Vec<usize>]) -> Result<ClusterStats> {
    if images.is_empty() {
        return Err(Error::Usage("cluster_stats on an empty state set"));
    }
    if images.len() != codes.len() {
        return Err(Error::Dimension {
            context: "cluster_stats codes",
            expected: images.len(),
            actual: codes.len(),
        });
    }
    let dim = images[0].len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); codebook_size];
    for (i, (&k, img)) in codes.iter().zip(images).enumerate() {
        if k >= codebook_size {
            return Err(Error::Index { index: k, len: codebook_size });
        }
        if img.len() != dim {
            return Err(Error::Dimension {
                context: "cluster_stats image",
                expected: dim,
                actual: img.len(),
            });
        }
        members[k].push(i);
    }
    let mut clusters = Vec::with_capacity(codebook_size);
    let mut empty = Vec::new();
    let (mut sum_mean, mut sum_std, mut non_empty) = (0.0, 0.0, 0usize);
    for (k, idx) in members.iter().enumerate() {
        if idx.is_empty() {
            empty.push(k);
            clusters.push(ClusterSummary {
                code: k,
                count: 0,
                mean_image: Vec::new(),
                pixel_mean: 0.0,
                pixel_std: 0.0,
            });
            continue;
        }
        let n = idx.len() as f64;
        let mut mean = vec![0.0; dim];
        for &i in idx {
            for (m, v) in mean.iter_mut().zip(&images[i]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let dists: Vec<f64> = idx.iter().map(|&i| l2(&images[i], &mean)).collect();
        let dm = dists.iter().sum::<f64>() / n;
        let ds = (dists.iter().map(|d| (d - dm) * (d - dm)).sum::<f64>() / n).sqrt();
        sum_mean += dm;
        sum_std += ds;
        non_empty += 1;
        clusters.push(ClusterSummary {
            code: k,
            count: idx.len(),
            mean_image: mean,
            pixel_mean: dm,
            pixel_std: ds,
        });
    }
    let transition = match transition_probability(sequences) {
        Ok(p) => Some(p),
        Err(Error::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(ClusterStats {
        clusters,
        pooled_pixel_mean: sum_mean / non_empty as f64,
        pooled_pixel_std: sum_std / non_empty as f64,
        empty_clusters: empty,
        transition_probability: transition,
    })
}

pub fn state_set_stats(states: &StateSet, codebook_size: usize) -> Result<ClusterStats> {
    let images: Vec<Vec<f64>> = states.records.iter().map(|r| r.image.clone()).collect();
    cluster_stats(&images, &states.codes(), codebook_size, &states.episode_codes())
}

/// Fraction of states assigned to each code.
pub fn code_coverage(codes: &[usize], codebook_size: usize) -> Vec<f64> {
    let mut c = vec![0.0; codebook_size];
    for &k in codes {
        if k < codebook_size {
            c[k] += 1.0;
        }
    }
    if !codes.is_empty() {
        c.iter_mut().for_each(|v| *v /= codes.len() as f64);
    }
    c
}

/// Maps a random `fraction` of the states through the FDR net on their own
/// and compares against the points of the whole set mapped together.
/// Returns the largest absolute coordinate difference.
pub fn subset_stability_check(semantic: &SemanticModule, store: &ParamStore, states: &StateSet, fraction: f64, seed: u64) -> Result<f64> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config("fraction must lie in (0, 1]".into()));
    }
    if states.is_empty() {
        return Err(Error::Usage("subset stability on an empty state set"));
    }
    let full = semantic.fdr_forward_batch(store, &states.feature_matrix())?;
    let n = states.len();
    let m = ((n as f64 * fraction).round() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, n, m).into_vec();
    picked.shuffle(&mut rng);
    let dim = states.records[0].feature.len();
    let mut sub = Matrix::zeros(m, dim);
    for (r, &i) in picked.iter().enumerate() {
        sub.row_mut(r).copy_from_slice(&states.records[i].feature);
    }
    let part = semantic.fdr_forward_batch(store, &sub)?;
    let mut worst = 0.0f64;
    for (r, &i) in picked.iter().enumerate() {
        for c in 0..2 {
            worst = worst.max((part.get(r, c) - full.get(i, c)).abs());
        }
    }
    Ok(worst)
}

/// Groups records by episode, ordered by step.
pub fn records_by_episode(states: &StateSet) -> BTreeMap<u64, Vec<usize>> {
    let mut map: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, r) in states.records.iter().enumerate() {
        map.entry(r.episode).or_default().push(i);
    }
    for v in map.values_mut() {
        v.sort_by_key(|&i| states.records[i].step);
    }
    map
}

/// Checks the pieces of a state record against each other.
pub fn validate_record(r: &StateRecord, feature_dim: usize, codebook_size: usize) -> Result<()> {
    if r.image.len() != IMAGE_LEN {
        return Err(Error::Dimension {
            context: "state image",
            expected: IMAGE_LEN,
            actual: r.image.len(),
        });
    }
    if r.feature.len() != feature_dim {
        return Err(Error::Dimension {
            context: "state feature",
            expected: feature_dim,
            actual: r.feature.len(),
        });
    }
    if r.code >= codebook_size {
        return Err(Error::Index {
            index: r.code,
            len: codebook_size,
        });
    }
    if r.observation.cells().len() != OBS_LEN {
        return Err(Error::Dimension {
            context: "state observation",
            expected: OBS_LEN,
            actual: r.observation.cells().len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transition_hand_counts() {
        assert_eq!(transition_probability(&[vec![0, 0, 1, 1, 1, 0]]).unwrap(), 0.4);
        assert_eq!(transition_probability(&[vec![3; 7]]).unwrap(), 0.0);
        assert_eq!(transition_probability(&[vec![1], vec![0, 1]]).unwrap(), 1.0);
        assert!(matches!(transition_probability(&[vec![1], vec![]]), Err(Error::Undefined(_))));
    }

    #[test]
    fn segments_hand_example() {
        let s = segment_episode(&[2, 2, 0, 0, 0, 7]);
        let t: Vec<_> = s.iter().map(|s| (s.code, s.start, s.end)).collect();
        assert_eq!(t, vec![(2, 0, 2), (0, 2, 5), (7, 5, 6)]);
        assert_eq!(segment_episode(&[4; 5]), vec![Segment { code: 4, start: 0, end: 5 }]);
        assert!(segment_episode(&[]).is_empty());
    }

    #[test]
    fn two_state_cluster_midpoint() {
        let a = vec![0.0, 0.0, 1.0];
        let b = vec![1.0, 0.0, 1.0];
        let s = cluster_stats(&[a, b], &[1, 1], 3, &[]).unwrap();
        assert_eq!(s.clusters[1].mean_image, vec![0.5, 0.0, 1.0]);
        assert_eq!(s.clusters[1].pixel_mean, 0.5);
        assert_eq!(s.clusters[1].pixel_std, 0.0);
        assert_eq!(s.empty_clusters, vec![0, 2]);
        assert_eq!(s.transition_probability, None);
    }
}
