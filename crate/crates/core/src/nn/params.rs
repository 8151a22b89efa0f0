use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::Arc;

use indexmap::IndexMap;

use crate::autograd::{Gradients, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Learnable (or frozen-learnable) tensor that may receive gradients.
    Weight,
    /// Running statistics; updated by forward passes, never differentiated.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct Parameter {
    value: Arc<Tensor>,
    grad: Option<Tensor>,
    trainable: bool,
    kind: ParamKind,
}

impl Parameter {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn grad(&self) -> Option<&Tensor> {
        self.grad.as_ref()
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn kind(&self) -> ParamKind {
        self.kind
    }
}

/// Ordered registry of named tensors with gradient accumulators.
#[derive(Clone, Debug, Default)]
pub struct ModelParameters {
    entries: IndexMap<String, Parameter>,
}

impl ModelParameters {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&mut self, name: &str, value: Arc<Tensor>, trainable: bool, kind: ParamKind) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.entries.insert(
            name.to_string(),
            Parameter {
                value,
                grad: None,
                trainable,
                kind,
            },
        );
        Ok(())
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> Result<()> {
        self.insert(name, Arc::new(value), true, ParamKind::Weight)
    }

    /// Registers a weight that is stored and checkpointed but never trained.
    pub fn register_frozen(&mut self, name: &str, value: Arc<Tensor>) -> Result<()> {
        self.insert(name, value, false, ParamKind::Weight)
    }

    pub fn register_buffer(&mut self, name: &str, value: Tensor) -> Result<()> {
        self.insert(name, Arc::new(value), false, ParamKind::Buffer)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entry(&self, name: &str) -> Result<&Parameter> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(self.entry(name)?.value())
    }

    pub(crate) fn arc(&self, name: &str) -> Result<Arc<Tensor>> {
        Ok(Arc::clone(&self.entry(name)?.value))
    }

    /// Puts `name` on the graph: a differentiable leaf if trainable, a
    /// constant otherwise.
    pub fn var(&self, g: &mut Graph, name: &str) -> Result<Var> {
        let p = self.entry(name)?;
        let value = Arc::clone(&p.value);
        Ok(if p.trainable {
            g.param_leaf(name, value)
        } else {
            g.constant_arc(value)
        })
    }

    /// Total scalar count over trainable weights.
    pub fn trainable_numel(&self) -> usize {
        self.entries
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn numel(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    /// Replaces a tensor's value; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter `{name}` has shape {}, new value {}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = Arc::new(value);
        Ok(())
    }

    pub(crate) fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?;
        Ok(Arc::make_mut(&mut p.value))
    }

    /// Trainable weights paired with their accumulated gradients.
    pub(crate) fn trainable_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor, Option<&Tensor>)> {
        self.entries.iter_mut().filter(|(_, p)| p.trainable).map(|(name, p)| {
            let Parameter { value, grad, .. } = p;
            (name.as_str(), Arc::make_mut(value), grad.as_ref())
        })
    }

    /// Adds `h` to one entry of a tensor (finite-difference probes).
    pub fn perturb(&mut self, name: &str, index: usize, h: f64) -> Result<()> {
        let t = self.value_mut(name)?;
        let slot = t
            .data_mut()
            .get_mut(index)
            .ok_or_else(|| Error::Argument(format!("index {index} outside `{name}`")))?;
        *slot += h;
        Ok(())
    }

    /// Sums a backward pass into the gradient accumulators and commits any
    /// running-statistics updates recorded during its forward pass.
    pub fn accumulate(&mut self, grads: Gradients) -> Result<()> {
        let (param_grads, buffers) = grads.into_parts();
        for (name, g) in param_grads {
            let p = self
                .entries
                .get_mut(&name)
                .ok_or_else(|| Error::Training(format!("gradient for unknown parameter `{name}`")))?;
            if !p.trainable {
                continue;
            }
            match &mut p.grad {
                Some(acc) => acc.add_assign(&g)?,
                slot @ None => *slot = Some(g),
            }
        }
        for (name, value) in buffers {
            self.set(&name, value)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad = None;
        }
    }

    /// Order-sensitive fingerprint of the bit patterns of every tensor whose
    /// name starts with `prefix`.
    pub fn checksum(&self, prefix: &str) -> u64 {
        let mut h = DefaultHasher::new();
        for (name, p) in &self.entries {
            if name.starts_with(prefix) {
                name.hash(&mut h);
                for v in p.value.data() {
                    v.to_bits().hash(&mut h);
                }
            }
        }
        h.finish()
    }

    /// Copies every tensor of `self` from `source`, requiring identical names
    /// and shapes; reports the first tensor that does not fit.
    pub fn assign_from(&mut self, source: &IndexMap<String, Tensor>) -> Result<()> {
        for (name, p) in &self.entries {
            match source.get(name) {
                Some(t) if t.shape() == p.value.shape() => {}
                Some(t) => {
                    return Err(Error::CheckpointTensor {
                        name: name.clone(),
                        expected: p.value.dims(),
                        found: format!("shape {}", t.shape()),
                    })
                }
                None => {
                    return Err(Error::CheckpointTensor {
                        name: name.clone(),
                        expected: p.value.dims(),
                        found: "no such tensor".into(),
                    })
                }
            }
        }
        for (name, p) in self.entries.iter_mut() {
            p.value = Arc::new(source[name].clone());
            p.grad = None;
        }
        Ok(())
    }

    pub fn shapes(&self) -> Vec<(String, Shape)> {
        self.entries
            .iter()
            .map(|(k, v)| (k.clone(), v.value.shape()))
            .collect()
    }
}
