use alloc::vec::Vec;

use crate::diffmath::{Matrix, NodeId, Tape};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoCoefficients {
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

impl Default for PpoCoefficients {
    fn default() -> Self {
        Self {
            clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
        }
    }
}

/// Per-transition targets of one PPO minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoTargets {
    pub actions: Vec<usize>,
    pub old_logprobs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl PpoTargets {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PpoTerms {
    pub loss: NodeId,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
}

fn column(v: &[f64]) -> Matrix {
    Matrix::from_vec(v.len(), 1, v.to_vec()).expect("column")
}

/// Clipped surrogate + value error − entropy bonus, recorded on `tape`.
///
/// `logprobs` is the `n × 4` log-policy node, `values` the `n × 1` critic node.
pub fn ppo_loss(tape: &mut Tape, logprobs: NodeId, values: NodeId, targets: &PpoTargets, coef: &PpoCoefficients) -> Result<PpoTerms> {
    let n = targets.len();
    if n == 0 {
        return Err(Error::Usage("ppo_loss on an empty minibatch"));
    }
    for (ctx, len) in [
        ("ppo old logprobs", targets.old_logprobs.len()),
        ("ppo advantages", targets.advantages.len()),
        ("ppo returns", targets.returns.len()),
        ("ppo logits rows", tape.value(logprobs).rows()),
    ] {
        if len != n {
            return Err(Error::Dimension {
                context: ctx,
                expected: n,
                actual: len,
            });
        }
    }
    let new_lp = tape.pick(logprobs, &targets.actions)?;
    let old_lp = tape.input(column(&targets.old_logprobs));
    let log_ratio = tape.sub(new_lp, old_lp)?;
    let ratio = tape.exp(log_ratio);
    let adv = tape.input(column(&targets.advantages));
    let unclipped = tape.mul(ratio, adv)?;
    let clipped_ratio = tape.clamp(ratio, 1.0 - coef.clip, 1.0 + coef.clip);
    let clipped = tape.mul(clipped_ratio, adv)?;
    let surrogate = tape.minimum(unclipped, clipped)?;
    let surrogate = tape.mean(surrogate);
    let policy = tape.scale(surrogate, -1.0);

    let ret = tape.input(column(&targets.returns));
    let err = tape.sub(values, ret)?;
    let sq = tape.square(err);
    let value_mse = tape.mean(sq);
    let value_term = tape.scale(value_mse, coef.value_coef);

    let probs = tape.exp(logprobs);
    let plogp = tape.mul(probs, logprobs)?;
    let neg_entropy = tape.row_sum(plogp);
    let neg_entropy = tape.mean(neg_entropy);
    let entropy_term = tape.scale(neg_entropy, coef.entropy_coef);

    let partial = tape.add(policy, value_term)?;
    let loss = tape.add(partial, entropy_term)?;
    Ok(PpoTerms {
        loss,
        policy: tape.value(policy).item(),
        value: tape.value(value_mse).item(),
        entropy: -tape.value(neg_entropy).item(),
    })
}

/// `L_DRL + f_control · (w_fdr · L_FDR + w_vq · L_VQ)`.
pub fn total_loss(l_drl: f64, l_fdr: f64, l_vq: f64, f_control: f64, w_fdr: f64, w_vq: f64) -> f64 {
    l_drl + f_control * (w_fdr * l_fdr + w_vq * l_vq)
}

/// Same combination recorded on a tape. With `f_control == 0` the semantic
/// nodes are left out entirely, so they contribute no gradient at all.
pub fn total_loss_tape(tape: &mut Tape, l_drl: NodeId, l_fdr: NodeId, l_vq: NodeId, f_control: f64, w_fdr: f64, w_vq: f64) -> Result<NodeId> {
    if f_control == 0.0 {
        return Ok(l_drl);
    }
    let a = tape.scale(l_fdr, w_fdr);
    let b = tape.scale(l_vq, w_vq);
    let sem = tape.add(a, b)?;
    let sem = tape.scale(sem, f_control);
    tape.add(l_drl, sem)
}
