use alloc::vec;
use alloc::vec::Vec;


use super::params::{ParamId, ParamStore};
#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

/// Adam with per-entry step counters, so entries frozen for a while start
/// with fresh bias correction when they are first updated.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: Vec<u64>,
    param_lr: Vec<Option<f64>>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let sizes: Vec<usize> = store.ids().map(|id| store.values(id).len()).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: vec![0; sizes.len()],
            param_lr: vec![None; sizes.len()],
            m: sizes.iter().map(|n| vec![0.0; *n]).collect(),
            v: sizes.iter().map(|n| vec![0.0; *n]).collect(),
        }
    }

    /// Uses `lr` for `id` instead of the shared rate.
    pub fn set_param_lr(&mut self, id: ParamId, lr: f64) {
        self.param_lr[id.index()] = Some(lr);
    }

    /// Updates every entry.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step_where(store, |_| true);
    }

    /// Updates only the entries selected by `active`; the rest keep their values and moments.
    pub fn step_where(&mut self, store: &mut ParamStore, active: impl Fn(ParamId) -> bool) {
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            if !active(id) {
                continue;
            }
            let i = id.index();
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let lr = self.param_lr[i].unwrap_or(self.lr);
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let (values, grad) = store.values_and_grad_mut(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..values.len() {
                let g = grad[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let mhat = m[k] / c1;
                let vhat = v[k] / c2;
                values[k] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > max_norm {
        store.scale_grads(max_norm / norm);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut s = ParamStore::new();
        let a = s.insert("a", &[2], vec![1.0, -1.0]).unwrap();
        s.grad_mut(a).copy_from_slice(&[3.0, -0.5]);
        let mut opt = Adam::new(&s, 0.1);
        opt.step(&mut s);
        let v = s.values(a);
        assert!((v[0] - 0.9).abs() < 1e-6);
        assert!((v[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn per_parameter_rate_overrides_the_shared_one() {
        let mut s = ParamStore::new();
        let a = s.insert("a", &[1], vec![1.0]).unwrap();
        let b = s.insert("b", &[1], vec![1.0]).unwrap();
        s.grad_mut(a)[0] = 1.0;
        s.grad_mut(b)[0] = 1.0;
        let mut opt = Adam::new(&s, 0.1);
        opt.set_param_lr(b, 0.5);
        opt.step(&mut s);
        assert!((s.values(a)[0] - 0.9).abs() < 1e-6);
        assert!((s.values(b)[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn frozen_entries_do_not_move() {
        let mut s = ParamStore::new();
        let a = s.insert("a", &[1], vec![1.0]).unwrap();
        let b = s.insert("b", &[1], vec![1.0]).unwrap();
        s.grad_mut(a)[0] = 1.0;
        s.grad_mut(b)[0] = 1.0;
        let mut opt = Adam::new(&s, 0.1);
        opt.step_where(&mut s, |id| id == a);
        assert!(s.values(a)[0] < 1.0);
        assert_eq!(s.values(b)[0], 1.0);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut s = ParamStore::new();
        let a = s.insert("a", &[2], vec![0.0, 0.0]).unwrap();
        s.grad_mut(a).copy_from_slice(&[3.0, 4.0]);
        assert_eq!(clip_grad_norm(&mut s, 0.5), 5.0);
        assert!((s.grad_norm() - 0.5).abs() < 1e-15);
        s.grad_mut(a).copy_from_slice(&[0.3, 0.0]);
        clip_grad_norm(&mut s, 0.5);
        assert_eq!(s.grad(a), &[0.3, 0.0]);
    }
}
