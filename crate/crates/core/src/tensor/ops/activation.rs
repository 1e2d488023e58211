use super::expect_rank;
use crate::error::{Error, Result};
use crate::tensor::graph::{Backward, ReluPatterns};
use crate::tensor::{Graph, Real, Tensor, Var};

/// `mask` is set only when the active set was replayed.
struct ReluOp {
    mask: Option<Vec<bool>>,
}

impl<T: Real> Backward<T> for ReluOp {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<&mut Vec<T>>]) {
        let Some(gx) = grads[0].as_deref_mut() else { return };
        match &self.mask {
            Some(mask) => {
                for ((a, &on), &d) in gx.iter_mut().zip(mask).zip(g) {
                    if on {
                        *a += d;
                    }
                }
            }
            None => {
                for ((a, &x), &d) in gx.iter_mut().zip(inputs[0].data()).zip(g) {
                    if x > T::zero() {
                        *a += d;
                    }
                }
            }
        }
    }
}

struct SoftmaxOp {
    n: usize,
}

impl<T: Real> Backward<T> for SoftmaxOp {
    fn backward(&self, _: &[&Tensor<T>], output: &Tensor<T>, g: &[T], grads: &mut [Option<&mut Vec<T>>]) {
        let Some(gx) = grads[0].as_deref_mut() else { return };
        for ((y, dy), dx) in output
            .data()
            .chunks_exact(self.n)
            .zip(g.chunks_exact(self.n))
            .zip(gx.chunks_exact_mut(self.n))
        {
            let dot: T = y.iter().zip(dy).map(|(&a, &b)| a * b).sum();
            for i in 0..self.n {
                dx[i] += y[i] * (dy[i] - dot);
            }
        }
    }
}

struct CrossEntropyOp<T> {
    probs: Vec<T>,
    labels: Vec<usize>,
    classes: usize,
}

impl<T: Real> Backward<T> for CrossEntropyOp<T> {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<&mut Vec<T>>]) {
        let Some(gx) = grads[0].as_deref_mut() else { return };
        let scale = g[0] / T::from_usize_lossy(self.labels.len());
        for (b, &label) in self.labels.iter().enumerate() {
            let row = b * self.classes;
            for c in 0..self.classes {
                let onehot = if c == label { T::one() } else { T::zero() };
                gx[row + c] += (self.probs[row + c] - onehot) * scale;
            }
        }
    }
}

/// Numerically stable softmax of one row.
pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

impl<T: Real> Graph<T> {
    pub fn relu(&mut self, x: Var) -> Var {
        let mut patterns = std::mem::take(&mut self.relu);
        let v = self.value(x);
        let shape = v.shape().to_vec();
        let (data, mask) = match &mut patterns {
            ReluPatterns::Replay { patterns, next } if *next < patterns.len() => {
                let mask = patterns[*next].clone();
                assert_eq!(
                    mask.len(),
                    v.numel(),
                    "replayed rectifier pattern {next} has the wrong size"
                );
                *next += 1;
                let data = v
                    .data()
                    .iter()
                    .zip(&mask)
                    .map(|(&a, &on)| if on { a } else { T::zero() })
                    .collect();
                (data, Some(mask))
            }
            ReluPatterns::Record(patterns) => {
                patterns.push(v.data().iter().map(|&a| a > T::zero()).collect());
                (v.data().iter().map(|&a| a.max(T::zero())).collect(), None)
            }
            ReluPatterns::Free | ReluPatterns::Replay { .. } => {
                (v.data().iter().map(|&a| a.max(T::zero())).collect(), None)
            }
        };
        self.relu = patterns;
        self.record(Tensor::from_parts(shape, data), &[x], ReluOp { mask })
    }

    /// Softmax over the last axis.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let n = *v.shape().last().ok_or_else(|| Error::dim("softmax_rows on a scalar"))?;
        let mut data = v.data().to_vec();
        if n > 0 {
            data.chunks_exact_mut(n).for_each(softmax_in_place);
        }
        let out = Tensor::from_parts(v.shape().to_vec(), data);
        Ok(self.record(out, &[x], SoftmaxOp { n }))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        expect_rank(&shape, 2, "cross_entropy")?;
        let (batch, classes) = (shape[0], shape[1]);
        if labels.len() != batch || batch == 0 {
            return Err(Error::dim(format!(
                "cross_entropy: {} labels for batch of {batch}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::data(format!("label {bad} out of range for {classes} classes")));
        }
        let mut probs = self.value(logits).data().to_vec();
        probs.chunks_exact_mut(classes).for_each(softmax_in_place);
        let mut loss = T::zero();
        let logits_data = self.value(logits).data();
        for (b, &label) in labels.iter().enumerate() {
            let row = &logits_data[b * classes..][..classes];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            loss += lse - row[label];
        }
        loss /= T::from_usize_lossy(batch);
        let op = CrossEntropyOp {
            probs,
            labels: labels.to_vec(),
            classes,
        };
        Ok(self.record(Tensor::scalar(loss), &[logits], op))
    }
}
