//! Shared layer plumbing: forward passes bound to a parameter store,
//! batch normalization with running statistics, and uniform initializers.

use std::collections::HashMap;

use rand::distributions::Uniform;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, NormMode, ParamId, ParamKind, ParamStore, Real, Tensor, Var};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Default negative slope constant of the uniform initializer.
pub const NEGATIVE_SLOPE: f64 = 2.236_067_977_499_79;

/// `√(6 / ((1 + a²)·fan_in))`, which is `1/√fan_in` for `a = √5`.
pub fn uniform_bound(fan_in: usize, negative_slope: f64) -> f64 {
    (6.0 / ((1.0 + negative_slope * negative_slope) * fan_in as f64)).sqrt()
}

/// Tensor with i.i.d. entries uniform on `[−bound, bound]`.
pub fn uniform_tensor<T: Real, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    let b = T::from_f64_lossy(bound);
    let dist = Uniform::new_inclusive(-b, b);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample(&dist)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// One forward evaluation over a [`ParamStore`]: owns the graph, binds each
/// entry at most once and collects running-statistic updates, which are
/// applied with [`Pass::finish`] + [`apply_updates`].
pub struct Pass<'s, T: Real> {
    pub graph: Graph<T>,
    store: &'s ParamStore<T>,
    mode: NormMode,
    bound: HashMap<ParamId, Var>,
    updates: Vec<(ParamId, Vec<T>)>,
}

impl<'s, T: Real> Pass<'s, T> {
    pub fn new(store: &'s ParamStore<T>, mode: NormMode) -> Self {
        Self::with_graph(store, mode, Graph::new())
    }

    /// Records onto an existing (typically empty) graph.
    pub fn with_graph(store: &'s ParamStore<T>, mode: NormMode, graph: Graph<T>) -> Self {
        Pass {
            graph,
            store,
            mode,
            bound: HashMap::new(),
            updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> NormMode {
        self.mode
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.graph.param(self.store, id);
        self.bound.insert(id, v);
        v
    }

    pub fn input(&mut self, tensor: Tensor<T>) -> Var {
        self.graph.constant(tensor)
    }

    /// Gradients flow into the store, running statistics are returned.
    pub fn finish(self) -> (Graph<T>, Vec<(ParamId, Vec<T>)>) {
        (self.graph, self.updates)
    }
}

pub fn apply_updates<T: Real>(store: &mut ParamStore<T>, updates: Vec<(ParamId, Vec<T>)>) {
    for (id, values) in updates {
        store.get_mut(id).data_mut().copy_from_slice(&values);
    }
}

/// Batch normalization over axis 1 with learnable affine and running
/// statistics kept as store buffers.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, prefix: &str, channels: usize) -> Self {
        BatchNorm {
            channels,
            gamma: store.insert(
                format!("{prefix}.gamma"),
                Tensor::ones([channels]),
                ParamKind::Learnable,
            ),
            beta: store.insert(
                format!("{prefix}.beta"),
                Tensor::zeros([channels]),
                ParamKind::Learnable,
            ),
            running_mean: store.insert(
                format!("{prefix}.running_mean"),
                Tensor::zeros([channels]),
                ParamKind::Buffer,
            ),
            running_var: store.insert(
                format!("{prefix}.running_var"),
                Tensor::ones([channels]),
                ParamKind::Buffer,
            ),
        }
    }

    pub fn forward<T: Real>(&self, pass: &mut Pass<'_, T>, x: Var) -> Result<Var> {
        let channels = pass.graph.shape(x).get(1).copied();
        if channels != Some(self.channels) {
            return Err(Error::dim(format!(
                "batch norm expects {} channels, input is {:?}",
                self.channels,
                pass.graph.shape(x)
            )));
        }
        let gamma = pass.param(self.gamma);
        let beta = pass.param(self.beta);
        let store = pass.store;
        let rm = store.get(self.running_mean).data();
        let rv = store.get(self.running_var).data();
        let mode = pass.mode;
        let out = pass
            .graph
            .batch_norm(x, gamma, beta, mode, rm, rv, T::from_f64_lossy(BN_EPS))?;
        if let (Some(mean), Some(var)) = (out.batch_mean, out.batch_var) {
            let m = T::from_f64_lossy(BN_MOMENTUM);
            let keep = T::one() - m;
            let new_mean = rm.iter().zip(&mean).map(|(&r, &b)| keep * r + m * b).collect();
            let new_var = rv.iter().zip(&var).map(|(&r, &b)| keep * r + m * b).collect();
            pass.updates.push((self.running_mean, new_mean));
            pass.updates.push((self.running_var, new_var));
        }
        Ok(out.out)
    }
}
