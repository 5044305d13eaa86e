//! 1-D convolution and its transpose, valid padding, with exact adjoint
//! relationship: <conv1d(x), y> == <x, conv_transpose1d(y)> for shared weights.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub fn conv1d_out_len(input_len: usize, kernel: usize, stride: usize) -> usize {
    (input_len - kernel) / stride + 1
}

pub fn conv_transpose1d_out_len(frames: usize, kernel: usize, stride: usize) -> usize {
    (frames - 1) * stride + kernel
}

fn conv1d_raw<T: Scalar>(
    x: &[T],
    w: &[T],
    c_in: usize,
    len: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    frames: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); c_out * frames];
    for o in 0..c_out {
        for c in 0..c_in {
            let wk = &w[(o * c_in + c) * kernel..(o * c_in + c + 1) * kernel];
            let xc = &x[c * len..(c + 1) * len];
            for f in 0..frames {
                let base = f * stride;
                let mut s = out[o * frames + f];
                for (t, &wv) in wk.iter().enumerate() {
                    s = s + xc[base + t] * wv;
                }
                out[o * frames + f] = s;
            }
        }
    }
    out
}

/// Adjoint of conv1d_raw in its input argument: spreads frame values back
/// onto the sample axis. Also the forward pass of the transposed convolution.
fn conv_transpose1d_raw<T: Scalar>(
    y: &[T],
    w: &[T],
    c_fwd_out: usize,
    frames: usize,
    c_fwd_in: usize,
    kernel: usize,
    stride: usize,
    len: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); c_fwd_in * len];
    for o in 0..c_fwd_out {
        let yc = &y[o * frames..(o + 1) * frames];
        for c in 0..c_fwd_in {
            let wk = &w[(o * c_fwd_in + c) * kernel..(o * c_fwd_in + c + 1) * kernel];
            let xc = &mut out[c * len..(c + 1) * len];
            for (f, &yv) in yc.iter().enumerate() {
                let base = f * stride;
                for (t, &wv) in wk.iter().enumerate() {
                    xc[base + t] = xc[base + t] + yv * wv;
                }
            }
        }
    }
    out
}

fn conv1d_weight_grad<T: Scalar>(
    x: &[T],
    g: &[T],
    c_in: usize,
    len: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    frames: usize,
) -> Vec<T> {
    let mut dw = vec![T::zero(); c_out * c_in * kernel];
    for o in 0..c_out {
        let gc = &g[o * frames..(o + 1) * frames];
        for c in 0..c_in {
            let xc = &x[c * len..(c + 1) * len];
            let wk = &mut dw[(o * c_in + c) * kernel..(o * c_in + c + 1) * kernel];
            for (f, &gv) in gc.iter().enumerate() {
                let base = f * stride;
                for (t, d) in wk.iter_mut().enumerate() {
                    *d = *d + gv * xc[base + t];
                }
            }
        }
    }
    dw
}

impl<T: Scalar> Tensor<T> {
    /// Valid 1-D convolution. `self` is [C_in × L], `w` is [C_out × C_in × k].
    /// Output is [C_out × F] with F = (L - k) / stride + 1.
    pub fn conv1d(&self, w: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
        if self.shape().len() != 2 || w.shape().len() != 3 {
            return Err(Error::Shape(format!(
                "conv1d: input {:?}, weight {:?}",
                self.shape(),
                w.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv1d: stride must be >= 1".into()));
        }
        let (c_in, len) = (self.shape()[0], self.shape()[1]);
        let (c_out, wc_in, kernel) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        if wc_in != c_in {
            return Err(Error::Shape(format!(
                "conv1d: input has {} channels, weight expects {}",
                c_in, wc_in
            )));
        }
        if len < kernel {
            return Err(Error::Shape(format!(
                "conv1d: input length {} shorter than kernel {}",
                len, kernel
            )));
        }
        let frames = conv1d_out_len(len, kernel, stride);
        let data = conv1d_raw(self.data(), w.data(), c_in, len, c_out, kernel, stride, frames);
        let x = self.clone();
        let wt = w.clone();
        Tensor::op(
            "conv1d",
            vec![c_out, frames],
            data,
            vec![self.clone(), w.clone()],
            Box::new(move |g| {
                let dx =
                    conv_transpose1d_raw(g, wt.data(), c_out, frames, c_in, kernel, stride, len);
                let dw =
                    conv1d_weight_grad(x.data(), g, c_in, len, c_out, kernel, stride, frames);
                vec![Some(dx), Some(dw)]
            }),
        )
    }

    /// Transposed 1-D convolution, the adjoint of [`Tensor::conv1d`] with the
    /// same weight tensor. `self` is [C_in × F], `w` is [C_in × C_out × k].
    /// Output is [C_out × L] with L = (F - 1) * stride + k.
    pub fn conv_transpose1d(&self, w: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
        if self.shape().len() != 2 || w.shape().len() != 3 {
            return Err(Error::Shape(format!(
                "conv_transpose1d: input {:?}, weight {:?}",
                self.shape(),
                w.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument(
                "conv_transpose1d: stride must be >= 1".into(),
            ));
        }
        let (c_in, frames) = (self.shape()[0], self.shape()[1]);
        let (wc_in, c_out, kernel) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        if wc_in != c_in {
            return Err(Error::Shape(format!(
                "conv_transpose1d: input has {} channels, weight expects {}",
                c_in, wc_in
            )));
        }
        if frames == 0 {
            return Err(Error::Shape("conv_transpose1d: empty input".into()));
        }
        let len = conv_transpose1d_out_len(frames, kernel, stride);
        let data =
            conv_transpose1d_raw(self.data(), w.data(), c_in, frames, c_out, kernel, stride, len);
        let x = self.clone();
        let wt = w.clone();
        Tensor::op(
            "conv_transpose1d",
            vec![c_out, len],
            data,
            vec![self.clone(), w.clone()],
            Box::new(move |g| {
                // Backward of the adjoint is the forward convolution.
                let dx = conv1d_raw(g, wt.data(), c_out, len, c_in, kernel, stride, frames);
                let dw = conv1d_weight_grad(g, x.data(), c_out, len, c_in, kernel, stride, frames);
                vec![Some(dx), Some(dw)]
            }),
        )
    }
}
