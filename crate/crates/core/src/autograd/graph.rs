use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::sync::Arc;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

const NO_NODE: usize = usize::MAX;

/// Handle to a value produced on a [`Graph`].
///
/// Cloning is cheap: the tensor is shared.
#[derive(Clone, Debug)]
pub struct Var {
    id: usize,
    value: Arc<Tensor>,
}

impl Var {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> Shape {
        self.value.shape()
    }

    pub fn dims(&self) -> [usize; 4] {
        self.value.dims()
    }

    /// Whether gradients flow back through this value.
    pub fn requires_grad(&self) -> bool {
        self.id != NO_NODE
    }

    pub(crate) fn arc(&self) -> Arc<Tensor> {
        Arc::clone(&self.value)
    }

    pub fn to_tensor(&self) -> Tensor {
        (*self.value).clone()
    }
}

pub(crate) type BackwardFn = Box<dyn FnOnce(&Tensor) -> Vec<Option<Tensor>>>;

enum Leaf {
    Interior,
    Param(String),
    Watched,
}

struct Node {
    inputs: Vec<usize>,
    backward: Option<BackwardFn>,
    leaf: Leaf,
    shape: Shape,
}

/// Channel count observed at a named point of a forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub label: String,
    pub shape: Shape,
}

/// Reverse-mode computation tape.
///
/// Operations append nodes in execution order, so the node list is always
/// topologically sorted and [`Graph::backward`] is a single reverse sweep.
/// Only values that depend on a trainable parameter or a watched leaf are
/// recorded; everything else is a constant. An inference graph records
/// nothing at all, so intermediates are freed as soon as their last
/// [`Var`] is dropped.
pub struct Graph {
    recording: bool,
    nodes: Vec<Node>,
    /// softmax output node → its logits, for the fused cross-entropy gradient
    softmax_logits: HashMap<usize, Var>,
    buffer_updates: Vec<(String, Tensor)>,
    kinks: Option<DefaultHasher>,
    trace: Option<Vec<TraceEvent>>,
    detached: Detached,
}

/// Log of gradient-blocked tensors, so finite differences can hold them at
/// their base values.
#[derive(Default)]
enum Detached {
    #[default]
    Off,
    Capture(Vec<Tensor>),
    Replay(Vec<Tensor>, usize),
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// A recording graph for training or gradient checks.
    pub fn new() -> Self {
        Graph {
            recording: true,
            nodes: Vec::new(),
            softmax_logits: HashMap::new(),
            buffer_updates: Vec::new(),
            kinks: None,
            trace: None,
            detached: Detached::Off,
        }
    }

    /// A graph that records no backward information.
    pub fn inference() -> Self {
        Graph {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&self, t: Tensor) -> Var {
        Var {
            id: NO_NODE,
            value: Arc::new(t),
        }
    }

    pub(crate) fn constant_arc(&self, t: Arc<Tensor>) -> Var {
        Var { id: NO_NODE, value: t }
    }

    /// A value that gradients do not flow through. Under
    /// [`Graph::replay_detached`] the logged tensor is returned instead of `t`.
    pub fn detach(&mut self, t: Tensor) -> Var {
        let t = match &mut self.detached {
            Detached::Off => t,
            Detached::Capture(log) => {
                log.push(t.clone());
                t
            }
            Detached::Replay(log, next) => match log.get(*next) {
                Some(held) if held.shape() == t.shape() => {
                    *next += 1;
                    held.clone()
                }
                _ => t,
            },
        };
        self.constant(t)
    }

    /// Starts logging every [`Graph::detach`]ed tensor.
    pub fn capture_detached(&mut self) {
        self.detached = Detached::Capture(Vec::new());
    }

    pub fn take_detached(&mut self) -> Vec<Tensor> {
        match std::mem::take(&mut self.detached) {
            Detached::Capture(log) | Detached::Replay(log, _) => log,
            Detached::Off => Vec::new(),
        }
    }

    /// Substitutes `log`, in order, for subsequent detached values.
    pub fn replay_detached(&mut self, log: Vec<Tensor>) {
        self.detached = Detached::Replay(log, 0);
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn watch(&mut self, t: Tensor) -> Var {
        self.leaf(Arc::new(t), Leaf::Watched)
    }

    /// A trainable parameter leaf; its gradient is reported under `name`.
    pub(crate) fn param_leaf(&mut self, name: &str, t: Arc<Tensor>) -> Var {
        self.leaf(t, Leaf::Param(name.to_string()))
    }

    fn leaf(&mut self, t: Arc<Tensor>, leaf: Leaf) -> Var {
        if !self.recording {
            return Var { id: NO_NODE, value: t };
        }
        self.nodes.push(Node {
            inputs: Vec::new(),
            backward: None,
            leaf,
            shape: t.shape(),
        });
        Var {
            id: self.nodes.len() - 1,
            value: t,
        }
    }

    /// Appends an operation. `backward` maps the output gradient to one
    /// optional gradient per input, in `inputs` order; it is dropped unused
    /// when no input requires a gradient.
    pub(crate) fn record(
        &mut self,
        value: Tensor,
        inputs: &[&Var],
        backward: impl FnOnce(&Tensor) -> Vec<Option<Tensor>> + 'static,
    ) -> Var {
        let needs = self.recording && inputs.iter().any(|v| v.requires_grad());
        if !needs {
            return self.constant(value);
        }
        self.nodes.push(Node {
            inputs: inputs.iter().map(|v| v.id).collect(),
            backward: Some(Box::new(backward)),
            leaf: Leaf::Interior,
            shape: value.shape(),
        });
        Var {
            id: self.nodes.len() - 1,
            value: Arc::new(value),
        }
    }

    pub(crate) fn mark_softmax(&mut self, probs: &Var, logits: &Var) {
        if probs.requires_grad() {
            self.softmax_logits.insert(probs.id, logits.clone());
        }
    }

    pub(crate) fn softmax_source(&self, probs: &Var) -> Option<Var> {
        self.softmax_logits.get(&probs.id).cloned()
    }

    /// Queues a running-statistics update; committed by
    /// [`crate::nn::ModelParameters::accumulate`].
    pub(crate) fn push_buffer_update(&mut self, name: String, value: Tensor) {
        self.buffer_updates.push((name, value));
    }

    pub fn take_buffer_updates(&mut self) -> Vec<(String, Tensor)> {
        std::mem::take(&mut self.buffer_updates)
    }

    /// Starts fingerprinting the activation pattern (relu signs, max-pool
    /// argmaxes) of every subsequent operation.
    pub fn track_kinks(&mut self) {
        self.kinks = Some(DefaultHasher::new());
    }

    pub(crate) fn note_kinks<T: Hash>(&mut self, pattern: impl Iterator<Item = T>) {
        if let Some(h) = self.kinks.as_mut() {
            for p in pattern {
                p.hash(h);
            }
        }
    }

    /// Fingerprint of the activation pattern seen so far, if tracking.
    pub fn kink_signature(&self) -> Option<u64> {
        self.kinks.as_ref().map(|h| h.finish())
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&mut self, label: impl Into<String>, v: &Var) {
        if let Some(t) = self.trace.as_mut() {
            t.push(TraceEvent {
                label: label.into(),
                shape: v.shape(),
            });
        }
    }

    pub fn trace_events(&self) -> &[TraceEvent] {
        self.trace.as_deref().unwrap_or(&[])
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(mut self, loss: &Var) -> Result<Gradients> {
        if loss.value().len() != 1 {
            return Err(Error::Argument(format!(
                "backward needs a scalar loss, got {}",
                loss.shape()
            )));
        }
        let mut out = Gradients {
            params: IndexMap::new(),
            watched: HashMap::new(),
            buffer_updates: std::mem::take(&mut self.buffer_updates),
        };
        if !loss.requires_grad() {
            return Ok(out);
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.id] = Some(Tensor::ones(loss.shape()));
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &mut self.nodes[id];
            debug_assert_eq!(g.shape(), node.shape);
            match &node.leaf {
                Leaf::Param(name) => {
                    match out.params.get_mut(name) {
                        Some(acc) => acc.add_assign(&g)?,
                        None => {
                            out.params.insert(name.clone(), g);
                        }
                    }
                    continue;
                }
                Leaf::Watched => {
                    out.watched.insert(id, g);
                    continue;
                }
                Leaf::Interior => {}
            }
            let Some(backward) = node.backward.take() else { continue };
            let inputs = std::mem::take(&mut node.inputs);
            let input_grads = backward(&g);
            debug_assert_eq!(input_grads.len(), inputs.len());
            for (input, ig) in inputs.into_iter().zip(input_grads) {
                let (Some(ig), true) = (ig, input != NO_NODE) else { continue };
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&ig)?,
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(out)
    }
}

/// Result of a backward sweep.
#[derive(Debug, Default)]
pub struct Gradients {
    params: IndexMap<String, Tensor>,
    watched: HashMap<usize, Tensor>,
    buffer_updates: Vec<(String, Tensor)>,
}

impl Gradients {
    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Gradient with respect to a [`Graph::watch`]ed leaf; zero when the
    /// loss does not depend on it.
    pub fn wrt(&self, v: &Var) -> Tensor {
        self.watched
            .get(&v.id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(v.shape()))
    }

    pub fn buffer_updates(&self) -> &[(String, Tensor)] {
        &self.buffer_updates
    }

    pub(crate) fn into_parts(self) -> (IndexMap<String, Tensor>, Vec<(String, Tensor)>) {
        (self.params, self.buffer_updates)
    }
}
