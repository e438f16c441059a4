use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;


use crate::error::{Error, Result};
#[allow(unused_imports)] // inherent float methods shadow it when std is linked
use num_traits::Float;

/// Handle to one named entry of a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Vec<f64>,
}

/// Named parameter tensors with gradient buffers of identical shape.
///
/// Gradients accumulate (`+=`) across backward passes until
/// [`ParamStore::zero_grads`] is called.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Entry>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a new entry. Every dimension must be positive and `values`
    /// must hold exactly `shape.iter().product()` numbers.
    pub fn insert(&mut self, name: &str, shape: &[usize], values: Vec<f64>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateName(name.to_string()));
        }
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Config(alloc::format!("parameter `{name}` has an empty dimension")));
        }
        let numel: usize = shape.iter().product();
        if values.len() != numel {
            return Err(Error::Dimension {
                context: "parameter values",
                expected: numel,
                actual: values.len(),
            });
        }
        let id = self.entries.len();
        self.entries.push(Entry {
            name: name.to_string(),
            shape: shape.to_vec(),
            grad: vec![0.0; numel],
            values,
        });
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        let numel = shape.iter().product();
        self.insert(name, shape, vec![0.0; numel])
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.id(name).ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.entries[id.0].shape
    }

    pub fn values(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].values
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].values
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.entries[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.entries[id.0].grad
    }

    /// Mutable views of the values and gradient of one entry.
    pub fn values_and_grad_mut(&mut self, id: ParamId) -> (&mut [f64], &mut [f64]) {
        let e = &mut self.entries[id.0];
        (&mut e.values, &mut e.grad)
    }

    /// Weight values with the weight and bias gradient buffers, borrowed together.
    pub(crate) fn affine_parts(&mut self, weight: ParamId, bias: ParamId) -> (&[f64], &mut [f64], &mut [f64]) {
        assert_ne!(weight, bias, "weight and bias must be distinct entries");
        let (lo, hi, flip) = if weight.0 < bias.0 {
            (weight.0, bias.0, false)
        } else {
            (bias.0, weight.0, true)
        };
        let (left, right) = self.entries.split_at_mut(hi);
        let (a, b) = (&mut left[lo], &mut right[0]);
        if flip {
            (&b.values, &mut b.grad, &mut a.grad)
        } else {
            (&a.values, &mut a.grad, &mut b.grad)
        }
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    /// Euclidean norm of the concatenation of every gradient buffer.
    pub fn grad_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Replaces the values of `name`, rejecting any shape other than the registered one.
    pub fn load(&mut self, name: &str, shape: &[usize], values: &[f64]) -> Result<()> {
        let id = self.require(name)?;
        let e = &mut self.entries[id.0];
        if e.shape != shape {
            return Err(Error::Config(alloc::format!(
                "shape mismatch for `{name}`: expected {:?}, got {:?}",
                e.shape,
                shape
            )));
        }
        if values.len() != e.values.len() {
            return Err(Error::Dimension {
                context: "parameter values",
                expected: e.values.len(),
                actual: values.len(),
            });
        }
        e.values.copy_from_slice(values);
        Ok(())
    }
}
