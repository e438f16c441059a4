//! End-to-end acceptance run: prints one pass/fail line per criterion and
//! exits non-zero if any fails. Trains three SPPO and three PPO agents, so
//! expect it to take a while.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::time::{Duration, Instant};

use rand::Rng;
use semrl::checkpoint::{Checkpoint, Metadata};
use semrl_core::agent::{DEFAULT_FEATURE_DIM, PARAM_NAMES};
use semrl_core::analysis::*;
use semrl_core::diffmath::{Matrix, ParamStore, Tape};
use semrl_core::semantic::pairwise_similarities;
use semrl_core::trainer::{init_model, ReinitEvent, TrainConfig, Trainer};
use support::grad::{composite_check, fdr_check, ppo_check, vq_check, TOL};

const SEEDS: [u64; 3] = [2021, 2022, 2023];
const STATES: usize = 10_000;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, n: usize, ok: bool, detail: String) {
        println!("criterion {n:>2}: {} {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failures += 1;
        }
    }
}

struct Run {
    seed: u64,
    final_return: f64,
    elapsed: Duration,
    store: ParamStore,
    reinit_log: Vec<ReinitEvent>,
}

fn train(config: TrainConfig) -> Run {
    let start = Instant::now();
    let mut t = Trainer::new(config).unwrap();
    t.run(|_, _| {}).unwrap();
    Run {
        seed: t.config.seed,
        final_return: t.history.mean().unwrap_or(f64::NEG_INFINITY),
        elapsed: start.elapsed(),
        store: t.store,
        reinit_log: t.reinit_log,
    }
}

/// Collects exactly `STATES` states (20 envs × 500 steps, every state kept)
/// with the model restored from a checkpoint round trip.
fn ten_thousand(config: &TrainConfig, store: &ParamStore) -> StateSet {
    let model = restore(config, store);
    let collect = CollectConfig {
        n_envs: 20,
        steps: 500,
        collect_prob: 1.0,
        seed: 0,
        ..CollectConfig::default()
    };
    let set = collect_states(&model.agent, model.semantic.as_ref().unwrap(), &model.store, &collect).unwrap();
    assert_eq!(set.len(), STATES);
    set
}

fn gradient_fidelity(r: &mut Report) {
    let start = Instant::now();
    let mut worst = [0.0f64; 4];
    for seed in 0..3 {
        for (w, e) in worst.iter_mut().zip([fdr_check(seed), vq_check(seed), ppo_check(seed), composite_check(seed)]) {
            *w = w.max(e);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst.iter().all(|e| *e < TOL) && secs < 60.0;
    r.line(
        1,
        ok,
        format!(
            "max rel err fdr {:.1e} vq {:.1e} ppo {:.1e} total {:.1e} (< {TOL:.0e}), {secs:.1}s",
            worst[0], worst[1], worst[2], worst[3]
        ),
    );
}

fn similarity_suite(r: &mut Report) {
    let mut rng = support::rng(2);
    let mut ok = true;
    let mut worst = 0.0f64;
    for n in [2usize, 4, 16, 64] {
        for alpha in [1.0, 20.0] {
            for _ in 0..10 {
                let x = Matrix::from_vec(n, 3, (0..3 * n).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
                let p = pairwise_similarities(&x, alpha).unwrap();
                let mut total = 0.0;
                for i in 0..n {
                    ok &= p.get(i, i) == 0.0;
                    for j in 0..n {
                        ok &= p.get(i, j) >= 0.0 && p.get(i, j) == p.get(j, i);
                        total += p.get(i, j);
                    }
                }
                worst = worst.max((total - 1.0).abs());
            }
        }
    }
    let two = pairwise_similarities(&Matrix::from_vec(2, 2, vec![0.0, 0.0, 3.0, -1.0]).unwrap(), 20.0).unwrap();
    ok &= two.get(0, 1) == 0.5 && two.get(1, 0) == 0.5;
    let s = 3f64.sqrt() / 2.0;
    let tri = pairwise_similarities(&Matrix::from_vec(3, 2, vec![0.0, 0.0, 1.0, 0.0, 0.5, s]).unwrap(), 20.0).unwrap();
    let tri_err = (0..3)
        .flat_map(|i| (0..3).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| (tri.get(i, j) - 1.0 / 6.0).abs())
        .fold(0.0, f64::max);
    ok &= worst <= 1e-9 && tri_err < 1e-12;
    r.line(2, ok, format!("worst |sum - 1| {worst:.1e}, equilateral err {tri_err:.1e}"));
}

fn stop_gradient(r: &mut Report) {
    let f = support::agent_fixture(3, DEFAULT_FEATURE_DIM);
    let mut store = f.store.clone();
    let mut tape = Tape::new();
    let fw = f.agent.forward_tape(&store, Some(&f.semantic), &mut tape, f.obs.clone()).unwrap();
    let sem = fw.semantic.unwrap();
    store.zero_grads();
    tape.backward(sem.vq, &mut store).unwrap();
    let [l1w, l1b, l2w, l2b, codebook] = f.semantic.param_ids();
    let outside = f.agent.extractor_ids().into_iter().chain([l1w, l1b, l2w, l2b]);
    let zeros = outside.into_iter().all(|id| store.grad(id).iter().all(|g| g.to_bits() == 0));
    let grad = store.grad(codebook);
    let assigned = sem.codes.iter().all(|&k| grad[2 * k] != 0.0 || grad[2 * k + 1] != 0.0);
    r.line(3, zeros && assigned, format!("extractor/FDR grads bitwise zero: {zeros}, assigned rows nonzero: {assigned}"));
}

fn densification(r: &mut Report) {
    let start = Instant::now();
    let results: Vec<(f64, f64)> = (0..5).map(|seed| support::densify(seed, 200, 500.0, 1.0)).collect();
    let secs = start.elapsed().as_secs_f64();
    let ok = results.iter().all(|(b, a)| a < b) && secs < 60.0;
    let detail: Vec<String> = results.iter().map(|(b, a)| format!("{b:.3}->{a:.3}")).collect();
    r.line(4, ok, format!("{} ({secs:.1}s)", detail.join(", ")));
}

fn reduction(r: &mut Report) {
    let plain = TrainConfig {
        semantic: false,
        ..TrainConfig::default()
    };
    let zero = TrainConfig {
        w_fdr: 0.0,
        w_vq: 0.0,
        ..TrainConfig::default()
    };
    let mut a = Trainer::new(plain).unwrap();
    let mut b = Trainer::new(zero).unwrap();
    a.step().unwrap();
    b.step().unwrap();
    let same = PARAM_NAMES.iter().all(|n| {
        let (x, y) = (a.store.values(a.store.require(n).unwrap()), b.store.values(b.store.require(n).unwrap()));
        x.iter().zip(y).all(|(u, v)| u.to_bits() == v.to_bits())
    });
    r.line(5, same, format!("first update bitwise identical across {} agent tensors: {same}", PARAM_NAMES.len()));
}

fn parity(r: &mut Report, sppo: &[Run], ppo: &[Run]) {
    let mean = |runs: &[Run]| runs.iter().map(|x| x.final_return).sum::<f64>() / runs.len() as f64;
    let (s, p) = (mean(sppo), mean(ppo));
    let slowest = sppo.iter().chain(ppo).map(|x| x.elapsed).max().unwrap();
    let ok = s >= 0.9 * p && p >= 8.0 && slowest <= Duration::from_secs(30 * 60);
    let per: Vec<String> = sppo
        .iter()
        .zip(ppo)
        .map(|(a, b)| format!("seed {}: {:.2} vs {:.2}", a.seed, a.final_return, b.final_return))
        .collect();
    r.line(
        6,
        ok,
        format!("SPPO {s:.2} vs PPO {p:.2} (need >= {:.2}, PPO >= 8); {}; slowest run {:.0}s", 0.9 * p, per.join(", "), slowest.as_secs_f64()),
    );
}

/// Criterion 7 on the first trained seed's states.
fn stability(r: &mut Report, config: &TrainConfig, store: &ParamStore, states: &StateSet) {
    let model = restore(config, store);
    let sem = model.semantic.as_ref().unwrap();
    let mut worst = 0.0f64;
    for fraction in [0.25, 0.5, 1.0] {
        for seed in 0..3 {
            worst = worst.max(subset_stability_check(sem, &model.store, states, fraction, seed).unwrap());
        }
    }
    // Exact t-SNE is quadratic; it runs on the first 1000 of the same states.
    let sub = StateSet {
        records: states.records[..1000].to_vec(),
        episodes: Vec::new(),
    };
    let x = sub.feature_matrix();
    let embed = |seed| {
        exact_tsne(
            &x,
            &TsneConfig {
                seed,
                ..TsneConfig::default()
            },
        )
        .unwrap()
        .points
    };
    let (a, b) = (distances(&embed(1)), distances(&embed(2)));
    let frob = a.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
    r.line(7, worst == 0.0 && frob > 1e-3, format!("FDR subset discrepancy {worst:e}; t-SNE seed 1 vs 2 distance Frobenius {frob:.3e}"));
}

fn distances(p: &[[f64; 2]]) -> Vec<f64> {
    p.iter()
        .flat_map(|a| p.iter().map(move |b| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()))
        .collect()
}

fn restore(config: &TrainConfig, store: &ParamStore) -> semrl::checkpoint::LoadedModel {
    let ckpt = Checkpoint::from_store(
        store,
        Metadata {
            iteration: config.iterations,
            seed: config.seed,
            config_hash: String::new(),
        },
    );
    Checkpoint::from_json(&ckpt.to_json()).unwrap().restore(config).unwrap()
}

fn transitions(r: &mut Report, trained: &[(u64, f64)], untrained: &[(u64, f64)]) {
    let ok = trained.iter().zip(untrained).all(|(t, u)| t.1 < u.1);
    let per: Vec<String> = trained
        .iter()
        .zip(untrained)
        .map(|(t, u)| format!("seed {}: {:.4} vs {:.4}", t.0, t.1, u.1))
        .collect();
    r.line(8, ok, format!("trained vs untrained transition probability on {STATES} states: {}", per.join(", ")));
}

fn paper_protocol(r: &mut Report, config: &TrainConfig, store: &ParamStore) {
    let model = restore(config, store);
    let collect = CollectConfig {
        seed: 5,
        ..CollectConfig::default()
    }
    .paper_protocol();
    let set = collect_states(&model.agent, model.semantic.as_ref().unwrap(), &model.store, &collect).unwrap();
    let n = (collect.n_envs * collect.steps) as f64;
    let mean = n * collect.collect_prob;
    let sigma = (n * collect.collect_prob * (1.0 - collect.collect_prob)).sqrt();
    let z = (set.len() as f64 - mean) / sigma;
    r.line(
        9,
        z.abs() <= 4.0,
        format!("{} states from {}x{} at p={} (mean {mean}, z {z:.2})", set.len(), collect.n_envs, collect.steps, collect.collect_prob),
    );
}

fn code_usage(r: &mut Report, usage: &[(u64, Vec<f64>, Vec<ReinitEvent>)]) {
    let mut ok = true;
    let mut detail = Vec::new();
    for (seed, coverage, log) in usage {
        let covered = coverage.iter().filter(|c| **c >= 0.05).count();
        let tail = &log[log.len().saturating_sub(5)..];
        let clean = tail.len() == 5 && tail.iter().all(|e| e.reseeded.is_empty());
        ok &= covered >= 2 && clean;
        let pct: Vec<String> = coverage.iter().map(|c| format!("{:.0}", c * 100.0)).collect();
        let reseeds: Vec<String> = tail.iter().map(|e| format!("{}:{:?}", e.iteration, e.reseeded)).collect();
        detail.push(format!("seed {seed}: {covered} codes >= 5% [{}%], reseeds {}", pct.join(" "), reseeds.join(" ")));
    }
    r.line(10, ok, detail.join("; "));
}

fn analysis_oracles(r: &mut Report) {
    let tp = transition_probability(&[vec![0, 0, 1, 1, 1, 0]]).unwrap() == 0.4
        && transition_probability(&[vec![0, 1], vec![1, 1, 1], vec![5]]).unwrap() == 1.0 / 3.0;
    let seg = |code, start, end| Segment { code, start, end };
    let sg = segment_episode(&[2, 2, 0, 0, 0, 7]) == vec![seg(2, 0, 2), seg(0, 2, 5), seg(7, 5, 6)]
        && segment_episode(&[4; 11]) == vec![seg(4, 0, 11)];
    // Two-pixel states: code 0 {(0,0),(2,0)}, code 1 {(3,2),(1,2),(2,5),(2,-1)},
    // code 2 empty, code 3 {(5,5)}. Per-cluster distance mean/std (1,0), (2,1),
    // (0,0); pooled mean 1, std 1/3.
    let images = vec![
        vec![0.0, 0.0],
        vec![3.0, 2.0],
        vec![2.0, 0.0],
        vec![1.0, 2.0],
        vec![5.0, 5.0],
        vec![2.0, 5.0],
        vec![2.0, -1.0],
    ];
    let s = cluster_stats(&images, &[0, 1, 0, 1, 3, 1, 1], 4, &[vec![0, 0, 1, 1, 1, 0]]).unwrap();
    let per: Vec<(usize, f64, f64)> = s.clusters.iter().map(|c| (c.count, c.pixel_mean, c.pixel_std)).collect();
    let cs = per == vec![(2, 1.0, 0.0), (4, 2.0, 1.0), (0, 0.0, 0.0), (1, 0.0, 0.0)]
        && s.clusters[1].mean_image == vec![2.0, 2.0]
        && s.pooled_pixel_mean == 1.0
        && s.pooled_pixel_std == 1.0 / 3.0
        && s.empty_clusters == vec![2]
        && s.transition_probability == Some(0.4);
    r.line(11, tp && sg && cs, format!("transition_probability {tp}, segment_episode {sg}, cluster_stats {cs}"));
}

fn main() {
    let mut r = Report { failures: 0 };
    gradient_fidelity(&mut r);
    similarity_suite(&mut r);
    stop_gradient(&mut r);
    densification(&mut r);
    reduction(&mut r);

    let sppo: Vec<Run> = SEEDS
        .iter()
        .map(|&seed| train(TrainConfig {
            seed,
            ..TrainConfig::default()
        }))
        .collect();
    let ppo: Vec<Run> = SEEDS
        .iter()
        .map(|&seed| train(TrainConfig {
            seed,
            semantic: false,
            ..TrainConfig::default()
        }))
        .collect();
    parity(&mut r, &sppo, &ppo);

    let mut trained_tp = Vec::new();
    let mut untrained_tp = Vec::new();
    let mut usage = Vec::new();
    for run in &sppo {
        let config = TrainConfig {
            seed: run.seed,
            ..TrainConfig::default()
        };
        let states = ten_thousand(&config, &run.store);
        if run.seed == SEEDS[0] {
            stability(&mut r, &config, &run.store, &states);
        }
        trained_tp.push((run.seed, transition_probability(&states.episode_codes()).unwrap()));
        usage.push((run.seed, code_coverage(&states.codes(), config.codebook_size), run.reinit_log.clone()));
        let (fresh, ..) = init_model(&config).unwrap();
        let raw = ten_thousand(&config, &fresh);
        untrained_tp.push((run.seed, transition_probability(&raw.episode_codes()).unwrap()));
    }
    transitions(&mut r, &trained_tp, &untrained_tp);
    paper_protocol(&mut r, &TrainConfig::default(), &sppo[0].store);
    code_usage(&mut r, &usage);
    analysis_oracles(&mut r);

    println!("{} of 11 criteria failed", r.failures);
    if r.failures > 0 {
        std::process::exit(1);
    }
}
