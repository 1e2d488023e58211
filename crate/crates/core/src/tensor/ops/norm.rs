use crate::error::{Error, Result};
use crate::tensor::graph::Backward;
use crate::tensor::{Graph, Real, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with stored running statistics.
    Eval,
}

/// Result of [`Graph::batch_norm`]. In train mode the batch statistics are
/// returned so the caller can update its running estimates.
pub struct BatchNormOutput<T> {
    pub out: Var,
    pub batch_mean: Option<Vec<T>>,
    /// Unbiased batch variance.
    pub batch_var: Option<Vec<T>>,
}

struct BatchNormOp<T> {
    mode: NormMode,
    outer: usize,
    channels: usize,
    inner: usize,
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Real> Backward<T> for BatchNormOp<T> {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<&mut Vec<T>>]) {
        let (outer, ch, inner) = (self.outer, self.channels, self.inner);
        let gamma = inputs[1].data();
        let m = T::from_usize_lossy(outer * inner);
        let idx = |o: usize, c: usize| (o * ch + c) * inner;

        let mut sum_dy = vec![T::zero(); ch];
        let mut sum_dy_xhat = vec![T::zero(); ch];
        for o in 0..outer {
            for c in 0..ch {
                let base = idx(o, c);
                for i in 0..inner {
                    sum_dy[c] += g[base + i];
                    sum_dy_xhat[c] += g[base + i] * self.xhat[base + i];
                }
            }
        }
        if let Some(gg) = grads[1].as_deref_mut() {
            gg.iter_mut().zip(&sum_dy_xhat).for_each(|(a, &b)| *a += b);
        }
        if let Some(gb) = grads[2].as_deref_mut() {
            gb.iter_mut().zip(&sum_dy).for_each(|(a, &b)| *a += b);
        }
        let Some(gx) = grads[0].as_deref_mut() else { return };
        for o in 0..outer {
            for c in 0..ch {
                let base = idx(o, c);
                let scale = gamma[c] * self.inv_std[c];
                match self.mode {
                    NormMode::Eval => {
                        for i in 0..inner {
                            gx[base + i] += g[base + i] * scale;
                        }
                    }
                    NormMode::Train => {
                        let k = scale / m;
                        for i in 0..inner {
                            let j = base + i;
                            gx[j] += k * (m * g[j] - sum_dy[c] - self.xhat[j] * sum_dy_xhat[c]);
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Graph<T> {
    /// Per-channel normalization of `[N,C,...]` followed by the affine map
    /// `γ·x̂ + β`. Statistics run over every axis except the channel axis.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<BatchNormOutput<T>> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::dim(format!("batch_norm: input {shape:?} has no channel axis")));
        }
        let (outer, channels) = (shape[0], shape[1]);
        let inner: usize = shape[2..].iter().product();
        let group = outer * inner;
        if group == 0 || channels == 0 {
            return Err(Error::dim("batch_norm over an empty normalization group"));
        }
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [channels] {
                return Err(Error::dim(format!("batch_norm: {name} shape {:?}", self.shape(v))));
            }
        }
        if running_mean.len() != channels || running_var.len() != channels {
            return Err(Error::dim("batch_norm: running statistics length"));
        }
        let xd = self.value(x).data();
        let idx = |o: usize, c: usize| (o * channels + c) * inner;

        let (mean, var_biased, var_unbiased) = match mode {
            NormMode::Train => {
                let mut mean = vec![0.0f64; channels];
                for o in 0..outer {
                    for (c, m) in mean.iter_mut().enumerate() {
                        *m += xd[idx(o, c)..][..inner].iter().map(|v| v.to_f64_lossy()).sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= group as f64);
                let mut ss = vec![0.0f64; channels];
                for o in 0..outer {
                    for (c, s) in ss.iter_mut().enumerate() {
                        *s += xd[idx(o, c)..][..inner]
                            .iter()
                            .map(|v| (v.to_f64_lossy() - mean[c]).powi(2))
                            .sum::<f64>();
                    }
                }
                let biased: Vec<T> = ss.iter().map(|&s| T::from_f64_lossy(s / group as f64)).collect();
                let unbiased: Vec<T> = ss
                    .iter()
                    .map(|&s| T::from_f64_lossy(s / (group.max(2) - 1) as f64))
                    .collect();
                let mean: Vec<T> = mean.into_iter().map(T::from_f64_lossy).collect();
                (mean, biased, Some(unbiased))
            }
            NormMode::Eval => (running_mean.to_vec(), running_var.to_vec(), None),
        };
        let inv_std: Vec<T> = var_biased.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xd.len()];
        let mut data = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for c in 0..channels {
                let base = idx(o, c);
                for i in 0..inner {
                    let h = (xd[base + i] - mean[c]) * inv_std[c];
                    xhat[base + i] = h;
                    data[base + i] = h * gd[c] + bd[c];
                }
            }
        }
        let out = Tensor::from_parts(shape, data);
        let train = mode == NormMode::Train;
        let out = self.record(
            out,
            &[x, gamma, beta],
            BatchNormOp {
                mode,
                outer,
                channels,
                inner,
                xhat,
                inv_std,
            },
        );
        Ok(BatchNormOutput {
            out,
            batch_mean: train.then_some(mean),
            batch_var: var_unbiased,
        })
    }
}
