//! Exact (O(n²)) t-SNE used as the seed-sensitive baseline.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::diffmath::Matrix;
use crate::error::{Error, Result};
#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

pub const MAX_TSNE_POINTS: usize = 5000;

#[derive(Debug, Clone, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum_start: f64,
    pub momentum_final: f64,
    pub momentum_switch: usize,
    pub init_std: f64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            seed: 0,
            learning_rate: 200.0,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            momentum_start: 0.5,
            momentum_final: 0.8,
            momentum_switch: 250,
            init_std: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    pub points: Vec<[f64; 2]>,
    /// KL(P‖Q) of the final embedding, without exaggeration.
    pub kl: f64,
}

const BISECTION_STEPS: usize = 50;
const ENTROPY_TOL: f64 = 1e-5;
const P_FLOOR: f64 = 1e-12;

fn sq_distances(x: &Matrix) -> Vec<f64> {
    let n = x.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Row `i` of the conditional P, with the Gaussian precision found by
/// bisection so the row entropy matches `ln(perplexity)`.
fn conditional_row(d: &[f64], i: usize, target: f64, out: &mut [f64]) {
    let n = out.len();
    let (mut beta, mut lo, mut hi) = (1.0f64, f64::NEG_INFINITY, f64::INFINITY);
    for _ in 0..BISECTION_STEPS {
        // Shift by the smallest distance so the largest weight is exp(0).
        let dmin = (0..n).filter(|&j| j != i).map(|j| d[j]).fold(f64::INFINITY, f64::min);
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for j in 0..n {
            out[j] = if j == i { 0.0 } else { (-(d[j] - dmin) * beta).exp() };
            sum += out[j];
            weighted += (d[j] - dmin) * out[j];
        }
        let h = sum.ln() + beta * weighted / sum;
        out.iter_mut().for_each(|p| *p /= sum);
        let diff = h - target;
        if diff.abs() < ENTROPY_TOL {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
        }
    }
}

fn joint_p(x: &Matrix, perplexity: f64) -> Vec<f64> {
    let n = x.rows();
    let d = sq_distances(x);
    let mut p = vec![0.0; n * n];
    let target = perplexity.ln();
    for i in 0..n {
        conditional_row(&d[i * n..(i + 1) * n], i, target, &mut p[i * n..(i + 1) * n]);
    }
    let mut joint = vec![0.0; n * n];
    let total = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                joint[i * n + j] = ((p[i * n + j] + p[j * n + i]) / total).max(P_FLOOR);
            }
        }
    }
    joint
}

/// Student-t (one degree of freedom) affinities: returns the unnormalized
/// kernel matrix and its off-diagonal sum.
fn kernel(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            sum += 2.0 * v;
        }
    }
    (num, sum)
}

fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let (num, sum) = kernel(y);
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let pij = p[i * n + j];
                let q = (num[i * n + j] / sum).max(P_FLOOR);
                kl += pij * (pij / q).ln();
            }
        }
    }
    kl
}

/// Embeds the rows of `features` in 2D.
pub fn exact_tsne(features: &Matrix, config: &TsneConfig) -> Result<TsneResult> {
    let n = features.rows();
    if n < 2 {
        return Err(Error::BatchSize(n));
    }
    if n > MAX_TSNE_POINTS {
        return Err(Error::Config(alloc::format!("exact t-SNE supports at most {MAX_TSNE_POINTS} points, got {n}")));
    }
    if !(config.perplexity > 0.0) || config.perplexity >= n as f64 {
        return Err(Error::Config(alloc::format!("perplexity must lie in (0, {n}), got {}", config.perplexity)));
    }
    if !features.all_finite() {
        return Err(Error::Numeric("t-SNE input"));
    }
    let p = joint_p(features, config.perplexity);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = Normal::new(0.0, config.init_std).map_err(|_| Error::Config("t-SNE init std".into()))?;
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut velocity = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut grad = vec![[0.0f64; 2]; n];

    for it in 0..config.iterations {
        let exaggeration = if it < config.exaggeration_iters { config.exaggeration } else { 1.0 };
        let momentum = if it < config.momentum_switch { config.momentum_start } else { config.momentum_final };
        let (num, sum) = kernel(&y);
        for i in 0..n {
            let mut g = [0.0, 0.0];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let coef = (exaggeration * p[i * n + j] - w / sum) * w;
                g[0] += coef * (y[i][0] - y[j][0]);
                g[1] += coef * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * g[0], 4.0 * g[1]];
        }
        for i in 0..n {
            for c in 0..2 {
                let same_sign = (grad[i][c] > 0.0) == (velocity[i][c] > 0.0);
                gains[i][c] = if same_sign { (gains[i][c] * 0.8).max(0.01) } else { gains[i][c] + 0.2 };
                velocity[i][c] = momentum * velocity[i][c] - config.learning_rate * gains[i][c] * grad[i][c];
                y[i][c] += velocity[i][c];
            }
        }
        let mean = y.iter().fold([0.0, 0.0], |a, v| [a[0] + v[0], a[1] + v[1]]);
        for v in y.iter_mut() {
            v[0] -= mean[0] / n as f64;
            v[1] -= mean[1] / n as f64;
        }
        if y.iter().any(|v| !v[0].is_finite() || !v[1].is_finite()) {
            return Err(Error::Numeric("t-SNE embedding diverged"));
        }
    }
    let kl = kl_divergence(&p, &y);
    Ok(TsneResult { points: y, kl })
}
