use alloc::vec;
use alloc::vec::Vec;


use crate::error::{Error, Result};
#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

/// Advantages and bootstrapped returns for one trajectory segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Gae {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Generalized advantage estimation over one environment's segment.
///
/// `dones[t]` marks that the episode ended at step `t`, so neither the next
/// value nor the next advantage leaks across it. `bootstrap` is the value of
/// the state following the last step.
pub fn compute_gae(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> Result<Gae> {
    let n = rewards.len();
    for (ctx, len) in [("gae values", values.len()), ("gae dones", dones.len())] {
        if len != n {
            return Err(Error::Dimension {
                context: ctx,
                expected: n,
                actual: len,
            });
        }
    }
    let mut advantages = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = bootstrap;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        advantages[t] = next_adv;
        next_value = values[t];
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok(Gae { advantages, returns })
}

/// Shifts and scales to mean 0, std 1; the std is floored at `1e-8`.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
}
