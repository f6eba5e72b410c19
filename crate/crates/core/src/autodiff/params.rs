//! Named collections of differentiable tensors with matching gradient slots.

use std::collections::{BTreeMap, BTreeSet};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// A parameter value and its gradient accumulator, always the same shape.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

/// Named differentiable tensors: per-frame log-depth fields, ego and
/// per-object Pose6 vectors, and category height priors. Iteration order is
/// the lexicographic name order, which keeps optimizer updates and
/// checkpoints deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: BTreeMap<String, Param>,
    frozen: BTreeSet<String>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Inserts a parameter with a zero gradient slot. Names must be unique.
    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::ContractViolation(format!(
                "duplicate parameter name: {name}"
            )));
        }
        let grad = Tensor::zeros_like(&value);
        self.entries
            .insert(name.to_string(), Param { value, grad });
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|p| &p.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|p| &p.grad)
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|p| &mut p.value)
    }

    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::Lookup(format!("unknown parameter: {name}")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch(format!(
                "parameter {name} shape changed"
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn add_to_grad(&mut self, name: &str, g: &Tensor) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::Lookup(format!("unknown parameter: {name}")))?;
        if p.grad.shape() != g.shape() {
            return Err(Error::ShapeMismatch(format!(
                "gradient shape mismatch for {name}"
            )));
        }
        for (a, b) in p.grad.data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
        Ok(())
    }

    /// Resets every gradient slot to exact zero.
    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Sorted parameter names.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Frozen parameters keep receiving gradients but are skipped by
    /// optimizer updates.
    pub fn freeze(&mut self, name: &str) {
        self.frozen.insert(name.to_string());
    }

    pub fn unfreeze(&mut self, name: &str) {
        self.frozen.remove(name);
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    /// Total number of scalar components across all parameters.
    pub fn component_count(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    /// Resolves a flat component index into (name, index-within-parameter),
    /// following name order.
    pub fn component(&self, mut flat: usize) -> Option<(&str, usize)> {
        for (name, p) in &self.entries {
            if flat < p.value.len() {
                return Some((name.as_str(), flat));
            }
            flat -= p.value.len();
        }
        None
    }
}
