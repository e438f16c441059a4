//! Pieces shared by the gradient checks.

use rand::Rng;
use semrl_core::agent::DEFAULT_FEATURE_DIM;
use semrl_core::diffmath::{grad_check, relative_error, Matrix, NodeId, ParamStore, Tape};
use semrl_core::semantic::{modified_vq_loss, SemanticLosses};
use semrl_core::trainer::{ppo_loss, total_loss_tape, PpoCoefficients};
use semrl_core::Result;

use super::{agent_fixture, rng, AgentFixture};

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const SAMPLES: usize = 300;
pub const F_CONTROL: f64 = 0.7;
pub const W_FDR: f64 = 500.0;
pub const W_VQ: f64 = 1.0;

pub fn ppo(f: &AgentFixture, store: &ParamStore, tape: &mut Tape) -> Result<(NodeId, SemanticLosses)> {
    let fw = f.agent.forward_tape(store, Some(&f.semantic), tape, f.obs.clone())?;
    let drl = ppo_loss(tape, fw.logprobs, fw.values, &f.targets, &PpoCoefficients::default())?.loss;
    Ok((drl, fw.semantic.expect("semantic losses")))
}

/// The VQ term evaluated directly: FDR points come from `frozen` (the
/// stop-gradient operand is a constant), embeddings from `store`.
pub fn vq_reference(f: &AgentFixture, frozen: &Matrix, store: &ParamStore) -> f64 {
    let n = frozen.rows();
    (0..n)
        .map(|i| {
            let p = [frozen.get(i, 0), frozen.get(i, 1)];
            modified_vq_loss(p, f.semantic.embedding(store, f.semantic.nearest(store, p)))
        })
        .sum::<f64>()
        / n as f64
}

pub fn fdr_points(f: &AgentFixture, store: &ParamStore) -> Matrix {
    let feats = f.agent.features_batch(store, &f.obs).unwrap();
    f.semantic.fdr_forward_batch(store, &feats).unwrap()
}

/// Tape gradient of `analytic` against central differences of `numeric`,
/// sampled like `grad_check`: an entry uniformly, then a scalar inside it.
/// Samples whose absolute difference is below `floor` count as exact.
/// Returns the worst `(relative error, analytic, numeric)`.
pub fn compare(
    store: &mut ParamStore,
    analytic: impl Fn(&ParamStore, &mut Tape) -> Result<NodeId>,
    numeric: impl Fn(&ParamStore) -> f64,
    floor: f64,
    seed: u64,
) -> (f64, f64, f64) {
    store.zero_grads();
    let mut tape = Tape::new();
    let node = analytic(store, &mut tape).unwrap();
    tape.backward(node, store).unwrap();
    let ids: Vec<_> = store.ids().collect();
    let mut r = rng(seed);
    let mut worst = (0.0, 0.0, 0.0);
    for _ in 0..SAMPLES {
        let id = ids[r.random_range(0..ids.len())];
        let i = r.random_range(0..store.values(id).len());
        let g = store.grad(id)[i];
        let orig = store.values(id)[i];
        store.values_mut(id)[i] = orig + STEP;
        let plus = numeric(store);
        store.values_mut(id)[i] = orig - STEP;
        let minus = numeric(store);
        store.values_mut(id)[i] = orig;
        let n = (plus - minus) / (2.0 * STEP);
        let e = if (g - n).abs() < floor { 0.0 } else { relative_error(g, n) };
        if e > worst.0 {
            worst = (e, g, n);
        }
    }
    worst
}

/// Worst relative error of the FDR loss gradient on fixture `seed`.
pub fn fdr_check(seed: u64) -> f64 {
    let mut f = agent_fixture(seed, DEFAULT_FEATURE_DIM);
    let mut store = std::mem::take(&mut f.store);
    grad_check(&mut store, |s, t| Ok(ppo(&f, s, t)?.1.fdr), STEP, SAMPLES, &mut rng(seed + 50))
        .unwrap()
        .max_error
}

pub fn ppo_check(seed: u64) -> f64 {
    let mut f = agent_fixture(seed, DEFAULT_FEATURE_DIM);
    let mut store = std::mem::take(&mut f.store);
    grad_check(&mut store, |s, t| Ok(ppo(&f, s, t)?.0), STEP, SAMPLES, &mut rng(seed + 60))
        .unwrap()
        .max_error
}

/// The VQ term, differenced with the FDR points held at their unperturbed values.
pub fn vq_check(seed: u64) -> f64 {
    let mut f = agent_fixture(seed, DEFAULT_FEATURE_DIM);
    let mut store = std::mem::take(&mut f.store);
    let frozen = fdr_points(&f, &store);
    compare(&mut store, |s, t| Ok(ppo(&f, s, t)?.1.vq), |s| vq_reference(&f, &frozen, s), 0.0, seed + 70).0
}

pub fn composite_check(seed: u64) -> f64 {
    let mut f = agent_fixture(seed, DEFAULT_FEATURE_DIM);
    let mut store = std::mem::take(&mut f.store);
    let frozen = fdr_points(&f, &store);
    compare(
        &mut store,
        |s, t| {
            let (drl, sem) = ppo(&f, s, t)?;
            total_loss_tape(t, drl, sem.fdr, sem.vq, F_CONTROL, W_FDR, W_VQ)
        },
        |s| {
            let mut t = Tape::new();
            let (drl, sem) = ppo(&f, s, &mut t).unwrap();
            let (drl, fdr) = (t.value(drl).item(), t.value(sem.fdr).item());
            drl + F_CONTROL * (W_FDR * fdr + W_VQ * vq_reference(&f, &frozen, s))
        },
        0.0,
        seed + 80,
    )
    .0
}
