use super::{ParamId, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Vector-Jacobian product of one recorded operation.
pub(crate) trait Backward<T: Real> {
    /// Adds the contribution of `grad_out` to every `grads[i]` that is `Some`.
    /// Each present buffer has the length of `inputs[i]`.
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad_out: &[T], grads: &mut [Option<&mut Vec<T>>]);
}

struct Node<T: Real> {
    value: Tensor<T>,
    inputs: Vec<usize>,
    op: Option<Box<dyn Backward<T>>>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// How rectifiers choose their active units.
#[derive(Clone, Debug, Default)]
pub(crate) enum ReluPatterns {
    /// Active where the input is positive.
    #[default]
    Free,
    /// As `Free`, keeping every active set in recording order.
    Record(Vec<Vec<bool>>),
    /// Reuses previously recorded active sets in order.
    Replay { patterns: Vec<Vec<bool>>, next: usize },
}

/// Operation tape. Nodes are appended in evaluation order, so the reverse of
/// insertion order is a valid topological order for backpropagation.
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    pub(crate) relu: ReluPatterns,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            relu: ReluPatterns::Free,
        }
    }

    /// A graph that remembers the active set of every rectifier.
    pub fn recording_relu_patterns() -> Self {
        Graph {
            nodes: Vec::new(),
            relu: ReluPatterns::Record(Vec::new()),
        }
    }

    /// A graph whose rectifiers reuse `patterns` in order instead of testing
    /// their inputs. Near a point where no rectifier input is exactly zero this
    /// computes the same function as a free graph, minus its kinks.
    pub fn with_relu_patterns(patterns: Vec<Vec<bool>>) -> Self {
        Graph {
            nodes: Vec::new(),
            relu: ReluPatterns::Replay { patterns, next: 0 },
        }
    }

    /// Recorded (or replayed) rectifier active sets.
    pub fn into_relu_patterns(self) -> Vec<Vec<bool>> {
        match self.relu {
            ReluPatterns::Free => Vec::new(),
            ReluPatterns::Record(p) | ReluPatterns::Replay { patterns: p, .. } => p,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. It takes part in differentiation when the tensor tracks
    /// a gradient.
    pub fn leaf(&mut self, tensor: &Tensor<T>) -> Var {
        let requires_grad = tensor.is_tracked();
        self.push_leaf(tensor.value_only(), requires_grad, None)
    }

    /// Records a constant that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.push_leaf(tensor.value_only(), false, None)
    }

    /// Records a store entry as a leaf bound to its [`ParamId`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let requires_grad = store.is_trainable(id);
        self.push_leaf(store.get(id).value_only(), requires_grad, Some(id))
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            op: None,
            requires_grad,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn record(&mut self, value: Tensor<T>, inputs: &[Var], op: impl Backward<T> + 'static) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            inputs: inputs.iter().map(|v| v.0).collect(),
            op: requires_grad.then(|| Box::new(op) as Box<dyn Backward<T>>),
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Reverse-mode sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let root_value = &self.nodes[root.0].value;
        if root_value.numel() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[root.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[root.0] = Some(vec![T::one()]);

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let Some(op) = node.op.as_ref() else { continue };
            let Some(grad_out) = grads[i].take() else { continue };

            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
            let mut bufs: Vec<Option<Vec<T>>> = node
                .inputs
                .iter()
                .map(|&j| {
                    self.nodes[j].requires_grad.then(|| {
                        grads[j]
                            .take()
                            .unwrap_or_else(|| vec![T::zero(); self.nodes[j].value.numel()])
                    })
                })
                .collect();
            {
                let mut refs: Vec<Option<&mut Vec<T>>> = bufs.iter_mut().map(Option::as_mut).collect();
                op.backward(&inputs, &node.value, &grad_out, &mut refs);
            }
            for (&j, buf) in node.inputs.iter().zip(bufs) {
                let Some(buf) = buf else { continue };
                match grads[j].as_mut() {
                    // The same input appeared more than once.
                    Some(existing) => existing.iter_mut().zip(&buf).for_each(|(a, &b)| *a += b),
                    None => grads[j] = Some(buf),
                }
            }
            // Keep the root's own seed available to callers.
            if i == root.0 {
                grads[i] = Some(grad_out);
            }
        }
        Ok(Gradients { grads })
    }

    /// Runs [`Graph::backward`] and adds leaf gradients into the bound store
    /// entries.
    pub fn backward_into(&self, root: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let grads = self.backward(root)?;
        self.accumulate(&grads, store);
        Ok(grads)
    }

    pub fn accumulate(&self, grads: &Gradients<T>, store: &mut ParamStore<T>) {
        for (i, node) in self.nodes.iter().enumerate() {
            let (Some(id), Some(g)) = (node.param, grads.grads[i].as_ref()) else {
                continue;
            };
            if let Some(acc) = store.get_mut(id).grad_mut() {
                acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
            }
        }
    }
}

/// Gradients of one backward sweep, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` into a tracked tensor's accumulator.
    pub fn accumulate_into(&self, v: Var, tensor: &mut Tensor<T>) -> Result<()> {
        let Some(g) = self.get(v) else { return Ok(()) };
        let n = tensor.numel();
        let acc = tensor
            .grad_mut()
            .ok_or_else(|| Error::MissingGrad("untracked tensor".into()))?;
        if g.len() != n {
            return Err(Error::dim("gradient length differs from tensor"));
        }
        acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
        Ok(())
    }
}
