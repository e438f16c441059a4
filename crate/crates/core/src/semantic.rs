//! The semantic clustering path: a small FDR network maps state features to
//! 2D, a Student-t similarity loss keeps the pairwise structure of the
//! features, and a codebook of 2D embeddings clusters the mapped points online.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::diffmath::{affine_forward, relu_forward, Matrix, NodeId, ParamId, ParamStore, Tape, LOG_FLOOR};
use crate::error::{Error, Result};
#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

pub const FDR_HIDDEN: usize = 128;
pub const POINT_DIM: usize = 2;

/// A 2D point produced by the FDR network.
pub type FdrPoint = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticConfig {
    /// Degrees of freedom of the Student-t kernel, shared by both spaces.
    pub alpha: f64,
    pub codebook_size: usize,
    /// Treat the feature-space similarities as a constant target.
    pub stop_grad_p: bool,
    /// Standard deviation of the jitter added to re-seeded embeddings.
    pub reinit_noise: f64,
}

impl Default for SemanticConfig {
    fn default() -> Self {
        Self {
            alpha: 20.0,
            codebook_size: 8,
            stop_grad_p: false,
            reinit_noise: 0.01,
        }
    }
}

impl SemanticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.codebook_size == 0 {
            return Err(Error::Config("codebook_size must be positive".into()));
        }
        if !(self.reinit_noise >= 0.0) {
            return Err(Error::Config("reinit_noise must be non-negative".into()));
        }
        Ok(())
    }
}

/// Normalized pairwise similarities: symmetric, zero diagonal, entries sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(Matrix);

impl SimilarityMatrix {
    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    /// `−Σ p log p` over the off-diagonal entries.
    pub fn entropy(&self) -> f64 {
        let n = self.n();
        let mut h = 0.0;
        for i in 0..n {
            for j in 0..n {
                let p = self.get(i, j);
                if i != j && p > 0.0 {
                    h -= p * p.ln();
                }
            }
        }
        h
    }
}

/// Student-t similarities between the rows of `points`, normalized over all
/// ordered pairs `k ≠ l`.
pub fn pairwise_similarities(points: &Matrix, alpha: f64) -> Result<SimilarityMatrix> {
    let mut tape = Tape::new();
    let x = tape.input(points.clone());
    let p = tape.student_t(x, alpha)?;
    Ok(SimilarityMatrix(tape.value(p).clone()))
}

/// Cross-entropy `−Σ_{i≠j} p_ij log q_ij`, with `q` floored at `1e-12`.
pub fn fdr_loss(p: &SimilarityMatrix, q: &SimilarityMatrix) -> Result<f64> {
    if p.n() != q.n() {
        return Err(Error::Dimension {
            context: "fdr_loss",
            expected: p.n(),
            actual: q.n(),
        });
    }
    let n = p.n();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total -= p.get(i, j) * q.get(i, j).max(LOG_FLOOR).ln();
            }
        }
    }
    Ok(total)
}

/// `‖point − e‖²`. On a tape the point side is detached, see [`SemanticModule::losses`].
pub fn modified_vq_loss(point: FdrPoint, embedding: FdrPoint) -> f64 {
    let dx = point[0] - embedding[0];
    let dy = point[1] - embedding[1];
    dx * dx + dy * dy
}

/// Index of the embedding nearest to `point`; ties go to the lowest index.
pub fn nearest_code(embeddings: &[f64], point: FdrPoint) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, e) in embeddings.chunks_exact(POINT_DIM).enumerate() {
        let d = modified_vq_loss(point, [e[0], e[1]]);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// FDR network, codebook and per-code usage counters.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticModule {
    pub config: SemanticConfig,
    pub fdr_l1_w: ParamId,
    pub fdr_l1_b: ParamId,
    pub fdr_l2_w: ParamId,
    pub fdr_l2_b: ParamId,
    pub codebook: ParamId,
    usage: Vec<u64>,
}

/// Nodes produced by [`SemanticModule::losses`].
#[derive(Debug, Clone)]
pub struct SemanticLosses {
    pub points: NodeId,
    pub codes: Vec<usize>,
    pub fdr: NodeId,
    pub vq: NodeId,
}

impl SemanticModule {
    pub const FDR_L1_W: &'static str = "semantic.fdr.l1.weight";
    pub const FDR_L1_B: &'static str = "semantic.fdr.l1.bias";
    pub const FDR_L2_W: &'static str = "semantic.fdr.l2.weight";
    pub const FDR_L2_B: &'static str = "semantic.fdr.l2.bias";
    pub const CODEBOOK: &'static str = "semantic.codebook";

    /// Registers freshly initialized parameters: He-normal FDR weights, zero
    /// biases, codebook entries drawn i.i.d. from `N(0, 1)`.
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, feature_dim: usize, config: SemanticConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let he = |fan_in: usize, n: usize, rng: &mut R| -> Vec<f64> {
            let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            (0..n).map(|_| d.sample(rng)).collect()
        };
        let fdr_l1_w = store.insert(Self::FDR_L1_W, &[FDR_HIDDEN, feature_dim], he(feature_dim, FDR_HIDDEN * feature_dim, rng))?;
        let fdr_l1_b = store.zeros(Self::FDR_L1_B, &[FDR_HIDDEN])?;
        let fdr_l2_w = store.insert(Self::FDR_L2_W, &[POINT_DIM, FDR_HIDDEN], he(FDR_HIDDEN, POINT_DIM * FDR_HIDDEN, rng))?;
        let fdr_l2_b = store.zeros(Self::FDR_L2_B, &[POINT_DIM])?;
        let k = config.codebook_size;
        let emb: Vec<f64> = (0..k * POINT_DIM).map(|_| StandardNormal.sample(rng)).collect();
        let codebook = store.insert(Self::CODEBOOK, &[k, POINT_DIM], emb)?;
        Ok(Self {
            usage: vec![0; k],
            config,
            fdr_l1_w,
            fdr_l1_b,
            fdr_l2_w,
            fdr_l2_b,
            codebook,
        })
    }

    /// Looks up existing parameters by name, e.g. after loading a checkpoint.
    pub fn bind(store: &ParamStore, feature_dim: usize, config: SemanticConfig) -> Result<Self> {
        config.validate()?;
        let m = Self {
            usage: vec![0; config.codebook_size],
            fdr_l1_w: store.require(Self::FDR_L1_W)?,
            fdr_l1_b: store.require(Self::FDR_L1_B)?,
            fdr_l2_w: store.require(Self::FDR_L2_W)?,
            fdr_l2_b: store.require(Self::FDR_L2_B)?,
            codebook: store.require(Self::CODEBOOK)?,
            config,
        };
        let expect: [(ParamId, &[usize]); 5] = [
            (m.fdr_l1_w, &[FDR_HIDDEN, feature_dim]),
            (m.fdr_l1_b, &[FDR_HIDDEN]),
            (m.fdr_l2_w, &[POINT_DIM, FDR_HIDDEN]),
            (m.fdr_l2_b, &[POINT_DIM]),
            (m.codebook, &[m.config.codebook_size, POINT_DIM]),
        ];
        for (id, shape) in expect {
            if store.shape(id) != shape {
                return Err(Error::Config(format!("unexpected shape {:?} for `{}`", store.shape(id), store.name(id))));
            }
        }
        Ok(m)
    }

    pub fn param_ids(&self) -> [ParamId; 5] {
        [self.fdr_l1_w, self.fdr_l1_b, self.fdr_l2_w, self.fdr_l2_b, self.codebook]
    }

    pub fn codebook_size(&self) -> usize {
        self.config.codebook_size
    }

    pub fn embeddings<'a>(&self, store: &'a ParamStore) -> &'a [f64] {
        store.values(self.codebook)
    }

    pub fn embedding(&self, store: &ParamStore, k: usize) -> FdrPoint {
        let e = self.embeddings(store);
        [e[2 * k], e[2 * k + 1]]
    }

    pub fn usage(&self) -> &[u64] {
        &self.usage
    }

    pub fn set_usage(&mut self, usage: &[u64]) -> Result<()> {
        if usage.len() != self.usage.len() {
            return Err(Error::Dimension {
                context: "codebook usage",
                expected: self.usage.len(),
                actual: usage.len(),
            });
        }
        self.usage.copy_from_slice(usage);
        Ok(())
    }

    pub fn record_usage(&mut self, k: usize) {
        self.usage[k] += 1;
    }

    /// FDR forward pass on a batch of features, one per row.
    pub fn fdr_forward_batch(&self, store: &ParamStore, features: &Matrix) -> Result<Matrix> {
        if features.cols() != store.shape(self.fdr_l1_w)[1] {
            return Err(Error::Dimension {
                context: "fdr input",
                expected: store.shape(self.fdr_l1_w)[1],
                actual: features.cols(),
            });
        }
        let h = affine_forward(features, store.values(self.fdr_l1_w), store.values(self.fdr_l1_b), FDR_HIDDEN);
        let h = relu_forward(&h);
        Ok(affine_forward(&h, store.values(self.fdr_l2_w), store.values(self.fdr_l2_b), POINT_DIM))
    }

    pub fn fdr_forward(&self, store: &ParamStore, feature: &[f64]) -> Result<FdrPoint> {
        let out = self.fdr_forward_batch(store, &Matrix::row_vector(feature.to_vec()))?;
        Ok([out.get(0, 0), out.get(0, 1)])
    }

    pub fn fdr_tape(&self, store: &ParamStore, tape: &mut Tape, features: NodeId) -> Result<NodeId> {
        let h = tape.affine(store, features, self.fdr_l1_w, self.fdr_l1_b)?;
        let h = tape.relu(h);
        tape.affine(store, h, self.fdr_l2_w, self.fdr_l2_b)
    }

    /// Nearest code without touching the usage counters.
    pub fn nearest(&self, store: &ParamStore, point: FdrPoint) -> usize {
        nearest_code(self.embeddings(store), point)
    }

    /// Nearest code and its embedding; counts the hit in the usage counters.
    pub fn vq_encode(&mut self, store: &ParamStore, point: FdrPoint) -> (usize, FdrPoint) {
        let k = self.nearest(store, point);
        self.usage[k] += 1;
        (k, self.embedding(store, k))
    }

    /// Records the FDR and modified VQ losses for a batch of feature rows.
    ///
    /// Codes are assigned from the current codebook. The VQ term is the batch
    /// mean of `‖sg[point] − e_k‖²`, so only the codebook receives its gradient.
    pub fn losses(&self, store: &ParamStore, tape: &mut Tape, features: NodeId) -> Result<SemanticLosses> {
        let points = self.fdr_tape(store, tape, features)?;
        let pv = tape.value(points);
        let codes: Vec<usize> = (0..pv.rows()).map(|r| self.nearest(store, [pv.get(r, 0), pv.get(r, 1)])).collect();
        let p_src = if self.config.stop_grad_p { tape.stop_grad(features) } else { features };
        let p = tape.student_t(p_src, self.config.alpha)?;
        let q = tape.student_t(points, self.config.alpha)?;
        let fdr = tape.cross_entropy(p, q)?;
        let detached = tape.stop_grad(points);
        let emb = tape.gather_rows(store, self.codebook, &codes)?;
        let diff = tape.sub(detached, emb)?;
        let sq = tape.square(diff);
        let per_point = tape.row_sum(sq);
        let vq = tape.mean(per_point);
        Ok(SemanticLosses { points, codes, fdr, vq })
    }

    /// Re-seeds every embedding unused since the last check at a random batch
    /// point plus `N(0, reinit_noise²)` jitter, then clears the counters.
    /// Returns the re-seeded code indices.
    pub fn reinit_dead_codes<R: Rng + ?Sized>(&mut self, store: &mut ParamStore, batch_points: &[FdrPoint], rng: &mut R) -> Result<Vec<usize>> {
        if batch_points.is_empty() {
            return Err(Error::Usage("reinit_dead_codes needs at least one batch point"));
        }
        let dead: Vec<usize> = (0..self.usage.len()).filter(|k| self.usage[*k] == 0).collect();
        let noise = Normal::new(0.0, self.config.reinit_noise).map_err(|_| Error::Config("reinit noise".into()))?;
        let emb = store.values_mut(self.codebook);
        for &k in &dead {
            let p = batch_points[rng.random_range(0..batch_points.len())];
            emb[2 * k] = p[0] + noise.sample(rng);
            emb[2 * k + 1] = p[1] + noise.sample(rng);
        }
        self.usage.iter_mut().for_each(|u| *u = 0);
        Ok(dead)
    }
}
