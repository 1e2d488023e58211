use super::expect_rank;
use crate::error::{Error, Result};
use crate::tensor::graph::Backward;
use crate::tensor::{gemm, Graph, MatMut, MatRef, Real, Tensor, Var};

#[derive(Clone, Copy, Debug)]
struct ConvGeometry {
    c_in: usize,
    c_out: usize,
    kernel: usize,
    dilation: usize,
    stride: usize,
    pad: usize,
    frames_in: usize,
    frames_out: usize,
    joints: usize,
}

impl ConvGeometry {
    fn col_rows(&self) -> usize {
        self.c_in * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.frames_out * self.joints
    }

    /// Input frame read by output frame `to` at tap `k`, if inside the clip.
    fn source_frame(&self, to: usize, k: usize) -> Option<usize> {
        let s = (to * self.stride + k * self.dilation) as isize - self.pad as isize;
        (s >= 0 && (s as usize) < self.frames_in).then_some(s as usize)
    }

    fn im2col<T: Real>(&self, x: &[T], col: &mut [T]) {
        let v = self.joints;
        let cols = self.col_cols();
        for c in 0..self.c_in {
            let xc = &x[c * self.frames_in * v..][..self.frames_in * v];
            for k in 0..self.kernel {
                let row = &mut col[(c * self.kernel + k) * cols..][..cols];
                for to in 0..self.frames_out {
                    let dst = &mut row[to * v..][..v];
                    match self.source_frame(to, k) {
                        Some(s) => dst.copy_from_slice(&xc[s * v..][..v]),
                        None => dst.iter_mut().for_each(|d| *d = T::zero()),
                    }
                }
            }
        }
    }

    fn col2im_add<T: Real>(&self, col: &[T], x: &mut [T]) {
        let v = self.joints;
        let cols = self.col_cols();
        for c in 0..self.c_in {
            let xc = &mut x[c * self.frames_in * v..][..self.frames_in * v];
            for k in 0..self.kernel {
                let row = &col[(c * self.kernel + k) * cols..][..cols];
                for to in 0..self.frames_out {
                    if let Some(s) = self.source_frame(to, k) {
                        xc[s * v..][..v]
                            .iter_mut()
                            .zip(&row[to * v..][..v])
                            .for_each(|(a, &b)| *a += b);
                    }
                }
            }
        }
    }
}

struct TemporalConvOp {
    geo: ConvGeometry,
    batch: usize,
}

impl<T: Real> Backward<T> for TemporalConvOp {
    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &[T], grads: &mut [Option<&mut Vec<T>>]) {
        let geo = self.geo;
        let (rows, cols) = (geo.col_rows(), geo.col_cols());
        let in_len = geo.c_in * geo.frames_in * geo.joints;
        let out_len = geo.c_out * cols;
        let (x, w) = (inputs[0].data(), inputs[1].data());
        let wm = MatRef::new(w, geo.c_out, rows);
        let mut col = vec![T::zero(); rows * cols];
        for b in 0..self.batch {
            let gb = MatRef::new(&g[b * out_len..][..out_len], geo.c_out, cols);
            if let Some(gw) = grads[1].as_deref_mut() {
                geo.im2col(&x[b * in_len..][..in_len], &mut col);
                gemm(
                    T::one(),
                    gb,
                    MatRef::new(&col, rows, cols).t(),
                    T::one(),
                    MatMut::new(gw, geo.c_out, rows),
                );
            }
            if let Some(gx) = grads[0].as_deref_mut() {
                gemm(T::one(), wm.t(), gb, T::zero(), MatMut::new(&mut col, rows, cols));
                geo.col2im_add(&col, &mut gx[b * in_len..][..in_len]);
            }
        }
    }
}

impl<T: Real> Graph<T> {
    /// Convolution along the frame axis with a `(t×1)` kernel:
    /// `[B,C_in,T,V] × [C_out,C_in,t,1] → [B,C_out,⌈T/s⌉,V]`.
    ///
    /// Zero padding of `(t−1)·d/2` frames on both sides keeps the output
    /// aligned with the input; the receptive field spans `(t−1)·d + 1` frames.
    pub fn temporal_conv(&mut self, x: Var, w: Var, dilation: usize, stride: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        expect_rank(&sx, 4, "temporal_conv input")?;
        expect_rank(&sw, 4, "temporal_conv weight")?;
        let kernel = sw[2];
        if kernel % 2 == 0 {
            return Err(Error::config(format!("temporal kernel size must be odd, got {kernel}")));
        }
        if dilation == 0 || stride == 0 {
            return Err(Error::config("dilation and stride must be >= 1"));
        }
        if sw[3] != 1 || sw[1] != sx[1] {
            return Err(Error::dim(format!("temporal_conv: input {sx:?} vs weight {sw:?}")));
        }
        let frames_in = sx[2];
        let frames_out = frames_in.div_ceil(stride);
        if frames_out < 1 {
            return Err(Error::dim("temporal_conv: empty output"));
        }
        let geo = ConvGeometry {
            c_in: sx[1],
            c_out: sw[0],
            kernel,
            dilation,
            stride,
            pad: (kernel - 1) * dilation / 2,
            frames_in,
            frames_out,
            joints: sx[3],
        };
        let batch = sx[0];
        let (rows, cols) = (geo.col_rows(), geo.col_cols());
        let in_len = geo.c_in * frames_in * geo.joints;
        let out_len = geo.c_out * cols;
        let xd = self.value(x).data();
        let wm = MatRef::new(self.value(w).data(), geo.c_out, rows);
        let mut col = vec![T::zero(); rows * cols];
        let mut data = vec![T::zero(); batch * out_len];
        for b in 0..batch {
            geo.im2col(&xd[b * in_len..][..in_len], &mut col);
            gemm(
                T::one(),
                wm,
                MatRef::new(&col, rows, cols),
                T::zero(),
                MatMut::new(&mut data[b * out_len..][..out_len], geo.c_out, cols),
            );
        }
        let out = Tensor::from_parts(vec![batch, geo.c_out, frames_out, geo.joints], data);
        Ok(self.record(out, &[x, w], TemporalConvOp { geo, batch }))
    }
}

/// Frames seen by one output frame of a dilated temporal kernel.
pub fn receptive_field(kernel: usize, dilation: usize) -> usize {
    (kernel - 1) * dilation + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn all_ones_kernel_same_pad() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 4, 1], &[1., 1., 1., 1.]));
        let w = g.constant(t(&[1, 1, 3, 1], &[1., 1., 1.]));
        let y = g.temporal_conv(x, w, 1, 1).unwrap();
        assert_eq!(g.value(y).data(), &[2., 3., 3., 2.]);
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut g = Graph::new();
        let data: Vec<f64> = (0..2 * 7 * 3).map(|i| (i as f64).sin()).collect();
        let xt = t(&[1, 2, 7, 3], &data);
        let x = g.constant(xt.clone());
        let mut wd = vec![0.0; 2 * 2 * 9];
        for c in 0..2 {
            wd[(c * 2 + c) * 9 + 4] = 1.0;
        }
        let w = g.constant(t(&[2, 2, 9, 1], &wd));
        let y = g.temporal_conv(x, w, 3, 1).unwrap();
        assert_eq!(g.value(y), &xt);
    }

    #[test]
    fn stride_two_halves_frames() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros([1, 1, 10, 2]));
        let w = g.constant(Tensor::zeros([1, 1, 9, 1]));
        let y = g.temporal_conv(x, w, 1, 2).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 5, 2]);
        let x = g.constant(Tensor::zeros([1, 1, 9, 2]));
        let y = g.temporal_conv(x, w, 1, 2).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 5, 2]);
    }

    #[test]
    fn even_kernel_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros([1, 1, 4, 1]));
        let w = g.constant(Tensor::zeros([1, 1, 4, 1]));
        assert!(matches!(g.temporal_conv(x, w, 1, 1), Err(Error::Config(_))));
    }

    #[test]
    fn empty_clip_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros([1, 1, 0, 1]));
        let w = g.constant(Tensor::zeros([1, 1, 3, 1]));
        assert!(matches!(g.temporal_conv(x, w, 1, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn receptive_field_formula() {
        assert_eq!(receptive_field(9, 3), 25);
        assert_eq!(receptive_field(9, 1), 9);
    }

    #[test]
    fn dilated_tap_reaches_expected_frame() {
        // single impulse at frame 12; kernel t=9, d=3 taps at offsets -12..=12 step 3
        let mut g = Graph::new();
        let mut xd = vec![0.0; 25];
        xd[12] = 1.0;
        let x = g.constant(t(&[1, 1, 25, 1], &xd));
        let w = g.constant(Tensor::ones([1, 1, 9, 1]));
        let y = g.temporal_conv(x, w, 3, 1).unwrap();
        let out = g.value(y).data();
        let hits: Vec<usize> = (0..25).filter(|&i| out[i] != 0.0).collect();
        assert_eq!(hits, vec![0, 3, 6, 9, 12, 15, 18, 21, 24]);
    }
}
