use super::expect_rank;
use crate::error::{Error, Result};
use crate::tensor::graph::Backward;
use crate::tensor::{gemm, Graph, MatMut, MatRef, Real, Tensor, Var};

struct MatMulOp {
    m: usize,
    k: usize,
    n: usize,
}

impl<T: Real> Backward<T> for MatMulOp {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<&mut Vec<T>>]) {
        let (m, k, n) = (self.m, self.k, self.n);
        let gm = MatRef::new(g, m, n);
        if let Some(ga) = grads[0].as_deref_mut() {
            // dA = dC·Bᵀ
            let b = MatRef::new(inputs[1].data(), k, n);
            gemm(T::one(), gm, b.t(), T::one(), MatMut::new(ga, m, k));
        }
        if let Some(gb) = grads[1].as_deref_mut() {
            // dB = Aᵀ·dC
            let a = MatRef::new(inputs[0].data(), m, k);
            gemm(T::one(), a.t(), gm, T::one(), MatMut::new(gb, k, n));
        }
    }
}

/// Per-sample channel mixing `y_b = W·x_b` with `x_b` viewed as `C_in×L`.
struct EmbedOp {
    batch: usize,
    c_in: usize,
    c_out: usize,
    len: usize,
}

impl<T: Real> Backward<T> for EmbedOp {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<&mut Vec<T>>]) {
        let (ci, co, l) = (self.c_in, self.c_out, self.len);
        let (x, w) = (inputs[0].data(), inputs[1].data());
        let wm = MatRef::new(w, co, ci);
        for b in 0..self.batch {
            let gb = MatRef::new(&g[b * co * l..][..co * l], co, l);
            if let Some(gx) = grads[0].as_deref_mut() {
                gemm(
                    T::one(),
                    wm.t(),
                    gb,
                    T::one(),
                    MatMut::new(&mut gx[b * ci * l..][..ci * l], ci, l),
                );
            }
            if let Some(gw) = grads[1].as_deref_mut() {
                let xb = MatRef::new(&x[b * ci * l..][..ci * l], ci, l);
                gemm(T::one(), gb, xb.t(), T::one(), MatMut::new(gw, co, ci));
            }
        }
    }
}

/// `A_b = θ_bᵀ·φ_b` with both viewed as `K×S`.
struct GramOp {
    batch: usize,
    k: usize,
    s: usize,
}

impl<T: Real> Backward<T> for GramOp {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<&mut Vec<T>>]) {
        let (k, s) = (self.k, self.s);
        for b in 0..self.batch {
            let gb = MatRef::new(&g[b * s * s..][..s * s], s, s);
            if let Some(gt) = grads[0].as_deref_mut() {
                // dθ = φ·dAᵀ
                let phi = MatRef::new(&inputs[1].data()[b * k * s..][..k * s], k, s);
                gemm(
                    T::one(),
                    phi,
                    gb.t(),
                    T::one(),
                    MatMut::new(&mut gt[b * k * s..][..k * s], k, s),
                );
            }
            if let Some(gp) = grads[1].as_deref_mut() {
                // dφ = θ·dA
                let theta = MatRef::new(&inputs[0].data()[b * k * s..][..k * s], k, s);
                gemm(
                    T::one(),
                    theta,
                    gb,
                    T::one(),
                    MatMut::new(&mut gp[b * k * s..][..k * s], k, s),
                );
            }
        }
    }
}

/// `y_b = x_b·M_b` with `x_b` viewed as `(C·T)×S`; `M` may be shared across
/// the batch.
struct JointMixOp {
    batch: usize,
    rows: usize,
    s_in: usize,
    s_out: usize,
    shared: bool,
}

impl<T: Real> Backward<T> for JointMixOp {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<&mut Vec<T>>]) {
        let (r, si, so) = (self.rows, self.s_in, self.s_out);
        let (x, m) = (inputs[0].data(), inputs[1].data());
        for b in 0..self.batch {
            let mb = if self.shared { 0 } else { b };
            let gb = MatRef::new(&g[b * r * so..][..r * so], r, so);
            if let Some(gx) = grads[0].as_deref_mut() {
                let mm = MatRef::new(&m[mb * si * so..][..si * so], si, so);
                gemm(
                    T::one(),
                    gb,
                    mm.t(),
                    T::one(),
                    MatMut::new(&mut gx[b * r * si..][..r * si], r, si),
                );
            }
            if let Some(gm) = grads[1].as_deref_mut() {
                let xb = MatRef::new(&x[b * r * si..][..r * si], r, si);
                gemm(
                    T::one(),
                    xb.t(),
                    gb,
                    T::one(),
                    MatMut::new(&mut gm[mb * si * so..][..si * so], si, so),
                );
            }
        }
    }
}

impl<T: Real> Graph<T> {
    /// Matrix product of `m×k` and `k×n` operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        expect_rank(&sa, 2, "matmul")?;
        expect_rank(&sb, 2, "matmul")?;
        if sa[1] != sb[0] {
            return Err(Error::dim(format!("matmul: inner extents {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![T::zero(); m * n];
        gemm(
            T::one(),
            MatRef::new(self.value(a).data(), m, k),
            MatRef::new(self.value(b).data(), k, n),
            T::zero(),
            MatMut::new(&mut data, m, n),
        );
        let out = Tensor::from_parts(vec![m, n], data);
        Ok(self.record(out, &[a, b], MatMulOp { m, k, n }))
    }

    /// Bias-free 1×1 convolution: `[B,C_in,...] × [C_out,C_in] → [B,C_out,...]`.
    pub fn embed(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        expect_rank(&sw, 2, "embed weight")?;
        if sx.len() < 2 || sx[1] != sw[1] {
            return Err(Error::dim(format!("embed: input {sx:?} vs weight {sw:?}")));
        }
        let (batch, c_in, c_out) = (sx[0], sx[1], sw[0]);
        let len: usize = sx[2..].iter().product();
        let xd = self.value(x).data();
        let wm = MatRef::new(self.value(w).data(), c_out, c_in);
        let mut data = vec![T::zero(); batch * c_out * len];
        for b in 0..batch {
            gemm(
                T::one(),
                wm,
                MatRef::new(&xd[b * c_in * len..][..c_in * len], c_in, len),
                T::zero(),
                MatMut::new(&mut data[b * c_out * len..][..c_out * len], c_out, len),
            );
        }
        let mut shape = sx;
        shape[1] = c_out;
        let out = Tensor::from_parts(shape, data);
        Ok(self.record(
            out,
            &[x, w],
            EmbedOp {
                batch,
                c_in,
                c_out,
                len,
            },
        ))
    }

    /// Per-sample inner products over every axis but the last:
    /// `[B,…,S] × [B,…,S] → [B,S,S]`.
    pub fn gram(&mut self, theta: Var, phi: Var) -> Result<Var> {
        let (st, sp) = (self.shape(theta).to_vec(), self.shape(phi).to_vec());
        if st != sp || st.len() < 2 {
            return Err(Error::dim(format!("gram: shapes {st:?} and {sp:?}")));
        }
        let batch = st[0];
        let s = st[st.len() - 1];
        let k: usize = st[1..st.len() - 1].iter().product();
        let (td, pd) = (self.value(theta).data(), self.value(phi).data());
        let mut data = vec![T::zero(); batch * s * s];
        for b in 0..batch {
            gemm(
                T::one(),
                MatRef::new(&td[b * k * s..][..k * s], k, s).t(),
                MatRef::new(&pd[b * k * s..][..k * s], k, s),
                T::zero(),
                MatMut::new(&mut data[b * s * s..][..s * s], s, s),
            );
        }
        let out = Tensor::from_parts(vec![batch, s, s], data);
        Ok(self.record(out, &[theta, phi], GramOp { batch, k, s }))
    }

    /// Right-multiplies the joint axis by a per-sample (or shared) matrix:
    /// `[B,C,T,S] × [B|1,S,S'] → [B,C,T,S']`.
    pub fn joint_mix(&mut self, x: Var, m: Var) -> Result<Var> {
        let (sx, sm) = (self.shape(x).to_vec(), self.shape(m).to_vec());
        expect_rank(&sx, 4, "joint_mix input")?;
        expect_rank(&sm, 3, "joint_mix matrix")?;
        let batch = sx[0];
        let shared = sm[0] == 1 && batch != 1;
        if (!shared && sm[0] != batch) || sm[1] != sx[3] {
            return Err(Error::dim(format!("joint_mix: input {sx:?} vs matrix {sm:?}")));
        }
        let (rows, s_in, s_out) = (sx[1] * sx[2], sm[1], sm[2]);
        let (xd, md) = (self.value(x).data(), self.value(m).data());
        let mut data = vec![T::zero(); batch * rows * s_out];
        for b in 0..batch {
            let mb = if shared { 0 } else { b };
            gemm(
                T::one(),
                MatRef::new(&xd[b * rows * s_in..][..rows * s_in], rows, s_in),
                MatRef::new(&md[mb * s_in * s_out..][..s_in * s_out], s_in, s_out),
                T::zero(),
                MatMut::new(&mut data[b * rows * s_out..][..rows * s_out], rows, s_out),
            );
        }
        let out = Tensor::from_parts(vec![sx[0], sx[1], sx[2], s_out], data);
        Ok(self.record(
            out,
            &[x, m],
            JointMixOp {
                batch,
                rows,
                s_in,
                s_out,
                shared,
            },
        ))
    }
}
