use super::{expect_rank, window_offsets};
use crate::error::{Error, Result};
use crate::tensor::graph::Backward;
use crate::tensor::{Graph, Real, Tensor, Var};

struct AddOp;

impl<T: Real> Backward<T> for AddOp {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<&mut Vec<T>>]) {
        for buf in grads.iter_mut().flatten() {
            buf.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
        }
    }
}

/// `b` broadcast over the leading axes of `a`.
struct AddBroadcastOp;

impl<T: Real> Backward<T> for AddBroadcastOp {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<&mut Vec<T>>]) {
        if let Some(ga) = grads[0].as_deref_mut() {
            ga.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
        }
        if let Some(gb) = grads[1].as_deref_mut() {
            let n = gb.len();
            for chunk in g.chunks_exact(n) {
                gb.iter_mut().zip(chunk).for_each(|(a, &b)| *a += b);
            }
        }
    }
}

struct MulOp;

impl<T: Real> Backward<T> for MulOp {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<&mut Vec<T>>]) {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        if let Some(ga) = grads[0].as_deref_mut() {
            for i in 0..g.len() {
                ga[i] += g[i] * b[i];
            }
        }
        if let Some(gb) = grads[1].as_deref_mut() {
            for i in 0..g.len() {
                gb[i] += g[i] * a[i];
            }
        }
    }
}

struct ScaleOp<T>(T);

impl<T: Real> Backward<T> for ScaleOp<T> {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<&mut Vec<T>>]) {
        if let Some(ga) = grads[0].as_deref_mut() {
            ga.iter_mut().zip(g).for_each(|(a, &b)| *a += b * self.0);
        }
    }
}

/// Broadcasts a scalar gradient, scaled, to every input element.
struct SumOp<T>(T);

impl<T: Real> Backward<T> for SumOp<T> {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<&mut Vec<T>>]) {
        if let Some(ga) = grads[0].as_deref_mut() {
            let v = g[0] * self.0;
            ga.iter_mut().for_each(|a| *a += v);
        }
    }
}

/// Pure relabeling of extents; gradients pass through unchanged.
struct ReshapeOp;

impl<T: Real> Backward<T> for ReshapeOp {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<&mut Vec<T>>]) {
        if let Some(ga) = grads[0].as_deref_mut() {
            ga.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
        }
    }
}

struct TransposeLast2Op {
    outer: usize,
    rows: usize,
    cols: usize,
}

fn transpose_blocks<T: Copy>(
    src: &[T],
    dst: &mut [T],
    outer: usize,
    rows: usize,
    cols: usize,
    add: impl Fn(&mut T, T),
) {
    for o in 0..outer {
        let base = o * rows * cols;
        for r in 0..rows {
            for c in 0..cols {
                add(&mut dst[base + c * rows + r], src[base + r * cols + c]);
            }
        }
    }
}

impl<T: Real> Backward<T> for TransposeLast2Op {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<&mut Vec<T>>]) {
        if let Some(ga) = grads[0].as_deref_mut() {
            // Output is [outer, cols, rows]; map back to [outer, rows, cols].
            transpose_blocks(g, ga, self.outer, self.cols, self.rows, |d, s| *d += s);
        }
    }
}

struct MeanAxisOp {
    outer: usize,
    n: usize,
    inner: usize,
}

impl<T: Real> Backward<T> for MeanAxisOp {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<&mut Vec<T>>]) {
        let Some(ga) = grads[0].as_deref_mut() else { return };
        let inv = T::one() / T::from_usize_lossy(self.n);
        for o in 0..self.outer {
            for k in 0..self.n {
                let dst = &mut ga[(o * self.n + k) * self.inner..][..self.inner];
                let src = &g[o * self.inner..][..self.inner];
                dst.iter_mut().zip(src).for_each(|(a, &b)| *a += b * inv);
            }
        }
    }
}

/// `[B,C,T,V] → [B,C,T,τV]` and its adjoint.
struct WindowUnfoldOp {
    rows: usize,
    frames: usize,
    joints: usize,
    tau: usize,
}

fn unfold_into<T: Real>(x: &[T], out: &mut [T], rows: usize, frames: usize, joints: usize, tau: usize) {
    let wide = tau * joints;
    for r in 0..rows {
        let src = &x[r * frames * joints..][..frames * joints];
        let dst = &mut out[r * frames * wide..][..frames * wide];
        for t in 0..frames {
            for (j, off) in window_offsets(tau).enumerate() {
                let s = t as isize + off;
                if s < 0 || s >= frames as isize {
                    continue;
                }
                let s = s as usize;
                dst[t * wide + j * joints..][..joints].copy_from_slice(&src[s * joints..][..joints]);
            }
        }
    }
}

impl<T: Real> Backward<T> for WindowUnfoldOp {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<&mut Vec<T>>]) {
        let Some(ga) = grads[0].as_deref_mut() else { return };
        let (frames, joints, tau) = (self.frames, self.joints, self.tau);
        let wide = tau * joints;
        for r in 0..self.rows {
            let src = &g[r * frames * wide..][..frames * wide];
            let dst = &mut ga[r * frames * joints..][..frames * joints];
            for t in 0..frames {
                for (j, off) in window_offsets(tau).enumerate() {
                    let s = t as isize + off;
                    if s < 0 || s >= frames as isize {
                        continue;
                    }
                    let s = s as usize;
                    let d = &mut dst[s * joints..][..joints];
                    d.iter_mut()
                        .zip(&src[t * wide + j * joints..][..joints])
                        .for_each(|(a, &b)| *a += b);
                }
            }
        }
    }
}

/// Sums the τ joint blocks of `[.., τV]` back to `[.., V]`.
struct WindowReduceOp {
    joints: usize,
    tau: usize,
}

impl<T: Real> Backward<T> for WindowReduceOp {
    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<&mut Vec<T>>]) {
        let Some(ga) = grads[0].as_deref_mut() else { return };
        let wide = self.tau * self.joints;
        for (row, grow) in ga.chunks_exact_mut(wide).zip(g.chunks_exact(self.joints)) {
            for block in row.chunks_exact_mut(self.joints) {
                block.iter_mut().zip(grow).for_each(|(a, &b)| *a += b);
            }
        }
    }
}

impl<T: Real> Graph<T> {
    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        Ok(self.record(out, &[a, b], AddOp))
    }

    /// `a + b` where `b`'s shape is a trailing suffix of `a`'s shape.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::dim(format!("add_broadcast: {sb:?} is not a suffix of {sa:?}")));
        }
        let (x, y) = (self.value(a), self.value(b));
        let n = y.numel();
        let mut data = x.data().to_vec();
        for chunk in data.chunks_exact_mut(n.max(1)) {
            chunk.iter_mut().zip(y.data()).for_each(|(p, &q)| *p += q);
        }
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        Ok(self.record(out, &[a, b], AddBroadcastOp))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p * q).collect();
        let out = Tensor::from_parts(x.shape().to_vec(), data);
        Ok(self.record(out, &[a, b], MulOp))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let x = self.value(a);
        let out = Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| v * factor).collect());
        self.record(out, &[a], ScaleOp(factor))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.record(out, &[a], SumOp(T::one()))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let inv = T::one() / T::from_usize_lossy(x.numel().max(1));
        let out = Tensor::scalar(x.sum() * inv);
        self.record(out, &[a], SumOp(inv))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if shape.iter().product::<usize>() != x.numel() {
            return Err(Error::dim(format!("reshape {:?} -> {shape:?}", x.shape())));
        }
        let out = Tensor::from_parts(shape.to_vec(), x.data().to_vec());
        Ok(self.record(out, &[a], ReshapeOp))
    }

    /// Swaps the two trailing axes.
    pub fn transpose_last2(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let r = x.rank();
        if r < 2 {
            return Err(Error::dim("transpose_last2 needs rank >= 2"));
        }
        let (rows, cols) = (x.shape()[r - 2], x.shape()[r - 1]);
        let outer = x.numel() / (rows * cols).max(1);
        let mut data = vec![T::zero(); x.numel()];
        transpose_blocks(x.data(), &mut data, outer, rows, cols, |d, s| *d = s);
        let mut shape = x.shape().to_vec();
        shape.swap(r - 2, r - 1);
        let out = Tensor::from_parts(shape, data);
        Ok(self.record(out, &[a], TransposeLast2Op { outer, rows, cols }))
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let x = self.value(a);
        if axis >= x.rank() {
            return Err(Error::dim(format!("mean_axis: axis {axis} of {:?}", x.shape())));
        }
        let n = x.shape()[axis];
        if n == 0 {
            return Err(Error::dim("mean_axis over an empty axis"));
        }
        let outer: usize = x.shape()[..axis].iter().product();
        let inner: usize = x.shape()[axis + 1..].iter().product();
        let inv = T::one() / T::from_usize_lossy(n);
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            let dst = &mut data[o * inner..][..inner];
            for k in 0..n {
                let src = &x.data()[(o * n + k) * inner..][..inner];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
            }
            dst.iter_mut().for_each(|d| *d *= inv);
        }
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        let out = Tensor::from_parts(shape, data);
        Ok(self.record(out, &[a], MeanAxisOp { outer, n, inner }))
    }

    /// Concatenates, for every frame, the joint slices of the `tau` frames in
    /// its window along the joint axis: `[B,C,T,V] → [B,C,T,τV]`.
    /// Frames outside the clip contribute zeros. `tau = 1` returns `x`.
    pub fn window_unfold(&mut self, x: Var, tau: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        expect_rank(&shape, 4, "window_unfold")?;
        if tau == 0 {
            return Err(Error::config("temporal window must be >= 1"));
        }
        if tau == 1 {
            return Ok(x);
        }
        let (b, c, frames, joints) = (shape[0], shape[1], shape[2], shape[3]);
        let rows = b * c;
        let mut data = vec![T::zero(); rows * frames * tau * joints];
        unfold_into(self.value(x).data(), &mut data, rows, frames, joints, tau);
        let out = Tensor::from_parts(vec![b, c, frames, tau * joints], data);
        Ok(self.record(
            out,
            &[x],
            WindowUnfoldOp {
                rows,
                frames,
                joints,
                tau,
            },
        ))
    }

    /// Sums the `tau` joint blocks: `[B,C,T,τV] → [B,C,T,V]`. `tau = 1`
    /// returns `x`.
    pub fn window_reduce(&mut self, x: Var, tau: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        expect_rank(&shape, 4, "window_reduce")?;
        if tau == 0 || !shape[3].is_multiple_of(tau) {
            return Err(Error::dim(format!(
                "window_reduce: {} joints not divisible by {tau}",
                shape[3]
            )));
        }
        if tau == 1 {
            return Ok(x);
        }
        let joints = shape[3] / tau;
        let src = self.value(x).data();
        let mut data = vec![T::zero(); src.len() / tau];
        for (row, out) in src.chunks_exact(tau * joints).zip(data.chunks_exact_mut(joints)) {
            for block in row.chunks_exact(joints) {
                out.iter_mut().zip(block).for_each(|(o, &v)| *o += v);
            }
        }
        let out = Tensor::from_parts(vec![shape[0], shape[1], shape[2], joints], data);
        Ok(self.record(out, &[x], WindowReduceOp { joints, tau }))
    }
}
