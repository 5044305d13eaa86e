//! Differentiable operations on [`Tensor`].
//!
//! Each op validates shapes, checks the output for NaN/Inf, and records a
//! backward closure when any input requires a gradient.

use rayon::prelude::*;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Row work threshold below which matmul stays single-threaded.
const PAR_THRESHOLD: usize = 64 * 1024;

// ---------------------------------------------------------------------------
// raw matrix kernels
// ---------------------------------------------------------------------------

/// a[m×k] @ b[k×n]
pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    let row = |i: usize, out_row: &mut [T]| {
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    };
    if m * n * k >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, out_row)| row(i, out_row));
    } else {
        for (i, out_row) in out.chunks_mut(n).enumerate() {
            row(i, out_row);
        }
    }
    out
}

/// a[m×k] @ b[n×k]^T -> m×n
pub(crate) fn matmul_nt_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    let row = |i: usize, out_row: &mut [T]| {
        let arow = &a[i * k..(i + 1) * k];
        for (j, o) in out_row.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            *o = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    };
    if m * n * k >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, out_row)| row(i, out_row));
    } else {
        for (i, out_row) in out.chunks_mut(n).enumerate() {
            row(i, out_row);
        }
    }
    out
}

/// a[m×k]^T @ b[m×n] -> k×n
pub(crate) fn matmul_tn_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// elementwise and broadcast ops
// ---------------------------------------------------------------------------

enum Broadcast {
    Same,
    LeftScalar,
    RightScalar,
}

fn broadcast_kind<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: &str) -> Result<Broadcast> {
    if a.shape() == b.shape() {
        Ok(Broadcast::Same)
    } else if a.numel() == 1 {
        Ok(Broadcast::LeftScalar)
    } else if b.numel() == 1 {
        Ok(Broadcast::RightScalar)
    } else {
        Err(Error::Shape(format!(
            "{op}: incompatible shapes {:?} vs {:?}",
            a.shape(),
            b.shape()
        )))
    }
}

impl<T: Scalar> Tensor<T> {
    fn unary_op(
        &self,
        name: &'static str,
        f: impl Fn(T) -> T,
        // df(x, y) -> dy/dx given input x and output y
        df: impl Fn(T, T) -> T + 'static,
    ) -> Result<Tensor<T>> {
        let data: Vec<T> = self.data().iter().map(|&x| f(x)).collect();
        let x = self.clone();
        let y = data.clone();
        Tensor::op(
            name,
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let dx = g
                    .iter()
                    .zip(x.data().iter().zip(&y))
                    .map(|(&gi, (&xi, &yi))| gi * df(xi, yi))
                    .collect();
                vec![Some(dx)]
            }),
        )
    }

    fn binary_op(
        &self,
        other: &Tensor<T>,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        // d(a op b)/da and /db given (a, b)
        dfa: impl Fn(T, T) -> T + 'static,
        dfb: impl Fn(T, T) -> T + 'static,
    ) -> Result<Tensor<T>> {
        let kind = broadcast_kind(self, other, name)?;
        let (shape, data): (Vec<usize>, Vec<T>) = match kind {
            Broadcast::Same => (
                self.shape().to_vec(),
                self.data()
                    .iter()
                    .zip(other.data())
                    .map(|(&a, &b)| f(a, b))
                    .collect(),
            ),
            Broadcast::LeftScalar => {
                let a = self.item();
                (
                    other.shape().to_vec(),
                    other.data().iter().map(|&b| f(a, b)).collect(),
                )
            }
            Broadcast::RightScalar => {
                let b = other.item();
                (
                    self.shape().to_vec(),
                    self.data().iter().map(|&a| f(a, b)).collect(),
                )
            }
        };
        let lhs = self.clone();
        let rhs = other.clone();
        Tensor::op(
            name,
            shape,
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let a = lhs.data();
                let b = rhs.data();
                let (da, db) = match (a.len(), b.len()) {
                    (1, _) if b.len() != 1 => {
                        let da = vec![g
                            .iter()
                            .zip(b)
                            .map(|(&gi, &bi)| gi * dfa(a[0], bi))
                            .sum::<T>()];
                        let db = g
                            .iter()
                            .zip(b)
                            .map(|(&gi, &bi)| gi * dfb(a[0], bi))
                            .collect();
                        (da, db)
                    }
                    (_, 1) if a.len() != 1 => {
                        let da = g
                            .iter()
                            .zip(a)
                            .map(|(&gi, &ai)| gi * dfa(ai, b[0]))
                            .collect();
                        let db = vec![g
                            .iter()
                            .zip(a)
                            .map(|(&gi, &ai)| gi * dfb(ai, b[0]))
                            .sum::<T>()];
                        (da, db)
                    }
                    _ => {
                        let da = g
                            .iter()
                            .zip(a.iter().zip(b))
                            .map(|(&gi, (&ai, &bi))| gi * dfa(ai, bi))
                            .collect();
                        let db = g
                            .iter()
                            .zip(a.iter().zip(b))
                            .map(|(&gi, (&ai, &bi))| gi * dfb(ai, bi))
                            .collect();
                        (da, db)
                    }
                };
                vec![Some(da), Some(db)]
            }),
        )
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary_op(other, "add", |a, b| a + b, |_, _| T::one(), |_, _| T::one())
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary_op(
            other,
            "sub",
            |a, b| a - b,
            |_, _| T::one(),
            |_, _| -T::one(),
        )
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary_op(other, "mul", |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary_op(
            other,
            "div",
            |a, b| a / b,
            |_, b| T::one() / b,
            |a, b| -a / (b * b),
        )
    }

    pub fn neg(&self) -> Result<Tensor<T>> {
        self.unary_op("neg", |x| -x, |_, _| -T::one())
    }

    pub fn scale(&self, c: T) -> Result<Tensor<T>> {
        self.unary_op("scale", move |x| x * c, move |_, _| c)
    }

    pub fn relu(&self) -> Result<Tensor<T>> {
        self.unary_op(
            "relu",
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(&self) -> Result<Tensor<T>> {
        self.unary_op(
            "sigmoid",
            |x| T::one() / (T::one() + (-x).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    pub fn tanh(&self) -> Result<Tensor<T>> {
        self.unary_op("tanh", |x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn exp(&self) -> Result<Tensor<T>> {
        self.unary_op("exp", |x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Result<Tensor<T>> {
        self.unary_op("ln", |x| x.ln(), |x, _| T::one() / x)
    }

    pub fn powf(&self, c: T) -> Result<Tensor<T>> {
        self.unary_op(
            "powf",
            move |x| x.powf(c),
            move |x, _| c * x.powf(c - T::one()),
        )
    }

    /// PReLU with a learnable scalar slope for the negative half.
    pub fn prelu(&self, slope: &Tensor<T>) -> Result<Tensor<T>> {
        if slope.numel() != 1 {
            return Err(Error::Shape("prelu: slope must be a scalar".into()));
        }
        let a = slope.item();
        let data: Vec<T> = self
            .data()
            .iter()
            .map(|&x| if x >= T::zero() { x } else { a * x })
            .collect();
        let x = self.clone();
        Tensor::op(
            "prelu",
            self.shape().to_vec(),
            data,
            vec![self.clone(), slope.clone()],
            Box::new(move |g| {
                let mut dx = Vec::with_capacity(g.len());
                let mut da = T::zero();
                for (&gi, &xi) in g.iter().zip(x.data()) {
                    if xi >= T::zero() {
                        dx.push(gi);
                    } else {
                        dx.push(gi * a);
                        da = da + gi * xi;
                    }
                }
                vec![Some(dx), Some(vec![da])]
            }),
        )
    }

    // -----------------------------------------------------------------------
    // matrix ops
    // -----------------------------------------------------------------------

    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (a_shape, b_shape) = (self.shape(), other.shape());
        if a_shape.len() != 2 || b_shape.len() != 2 || a_shape[1] != b_shape[0] {
            return Err(Error::Shape(format!(
                "matmul: {:?} x {:?}",
                a_shape, b_shape
            )));
        }
        let (m, k, n) = (a_shape[0], a_shape[1], b_shape[1]);
        let data = matmul_raw(self.data(), other.data(), m, k, n);
        let lhs = self.clone();
        let rhs = other.clone();
        Tensor::op(
            "matmul",
            vec![m, n],
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                // da = g @ b^T, db = a^T @ g
                let da = matmul_nt_raw(g, rhs.data(), m, n, k);
                let db = matmul_tn_raw(lhs.data(), g, m, k, n);
                vec![Some(da), Some(db)]
            }),
        )
    }

    /// a[m×k] @ b[n×k]^T without materializing the transpose.
    pub fn matmul_nt(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (a_shape, b_shape) = (self.shape(), other.shape());
        if a_shape.len() != 2 || b_shape.len() != 2 || a_shape[1] != b_shape[1] {
            return Err(Error::Shape(format!(
                "matmul_nt: {:?} x {:?}^T",
                a_shape, b_shape
            )));
        }
        let (m, k, n) = (a_shape[0], a_shape[1], b_shape[0]);
        let data = matmul_nt_raw(self.data(), other.data(), m, k, n);
        let lhs = self.clone();
        let rhs = other.clone();
        Tensor::op(
            "matmul_nt",
            vec![m, n],
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                // c = a b^T: da = g @ b, db = g^T @ a
                let da = matmul_raw(g, rhs.data(), m, n, k);
                let db = matmul_tn_raw(g, lhs.data(), m, n, k);
                vec![Some(da), Some(db)]
            }),
        )
    }

    pub fn transpose(&self) -> Result<Tensor<T>> {
        if self.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "transpose: expected 2-D, got {:?}",
                self.shape()
            )));
        }
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let x = self.data();
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = x[i * c + j];
            }
        }
        Tensor::op(
            "transpose",
            vec![c, r],
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); r * c];
                for j in 0..c {
                    for i in 0..r {
                        dx[i * c + j] = g[j * r + i];
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor<T>> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::Shape(format!(
                "reshape: {:?} -> {:?}",
                self.shape(),
                shape
            )));
        }
        Tensor::op(
            "reshape",
            shape,
            self.data().to_vec(),
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.to_vec())]),
        )
    }

    // -----------------------------------------------------------------------
    // broadcast over rows / columns of a 2-D tensor
    // -----------------------------------------------------------------------

    fn check_2d(&self, op: &str) -> Result<(usize, usize)> {
        if self.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "{op}: expected 2-D, got {:?}",
                self.shape()
            )));
        }
        Ok((self.shape()[0], self.shape()[1]))
    }

    /// x[i,j] + b[j]
    pub fn add_row(&self, b: &Tensor<T>) -> Result<Tensor<T>> {
        let (r, c) = self.check_2d("add_row")?;
        if b.numel() != c {
            return Err(Error::Shape(format!(
                "add_row: bias len {} vs {} cols",
                b.numel(),
                c
            )));
        }
        let bv = b.data();
        let data: Vec<T> = self
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(bv).map(|(&x, &y)| x + y).collect::<Vec<_>>())
            .collect();
        Tensor::op(
            "add_row",
            vec![r, c],
            data,
            vec![self.clone(), b.clone()],
            Box::new(move |g| {
                let mut db = vec![T::zero(); c];
                for row in g.chunks(c) {
                    for (d, &gi) in db.iter_mut().zip(row) {
                        *d = *d + gi;
                    }
                }
                vec![Some(g.to_vec()), Some(db)]
            }),
        )
    }

    /// x[i,j] * m[j]
    pub fn mul_row(&self, m: &Tensor<T>) -> Result<Tensor<T>> {
        let (r, c) = self.check_2d("mul_row")?;
        if m.numel() != c {
            return Err(Error::Shape(format!(
                "mul_row: vector len {} vs {} cols",
                m.numel(),
                c
            )));
        }
        let mv = m.data();
        let data: Vec<T> = self
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(mv).map(|(&x, &y)| x * y).collect::<Vec<_>>())
            .collect();
        let x = self.clone();
        let mt = m.clone();
        Tensor::op(
            "mul_row",
            vec![r, c],
            data,
            vec![self.clone(), m.clone()],
            Box::new(move |g| {
                let mv = mt.data();
                let mut dx = Vec::with_capacity(g.len());
                let mut dm = vec![T::zero(); c];
                for (grow, xrow) in g.chunks(c).zip(x.data().chunks(c)) {
                    for j in 0..c {
                        dx.push(grow[j] * mv[j]);
                        dm[j] = dm[j] + grow[j] * xrow[j];
                    }
                }
                vec![Some(dx), Some(dm)]
            }),
        )
    }

    /// x[i,j] + v[i]
    pub fn add_col(&self, v: &Tensor<T>) -> Result<Tensor<T>> {
        let (r, c) = self.check_2d("add_col")?;
        if v.numel() != r {
            return Err(Error::Shape(format!(
                "add_col: vector len {} vs {} rows",
                v.numel(),
                r
            )));
        }
        let vv = v.data();
        let data: Vec<T> = self
            .data()
            .chunks(c)
            .zip(vv)
            .flat_map(|(row, &y)| row.iter().map(|&x| x + y).collect::<Vec<_>>())
            .collect();
        Tensor::op(
            "add_col",
            vec![r, c],
            data,
            vec![self.clone(), v.clone()],
            Box::new(move |g| {
                let dv: Vec<T> = g.chunks(c).map(|row| row.iter().copied().sum()).collect();
                vec![Some(g.to_vec()), Some(dv)]
            }),
        )
    }

    /// x[i,j] * v[i] (scales each row by a per-row weight)
    pub fn mul_col(&self, v: &Tensor<T>) -> Result<Tensor<T>> {
        let (r, c) = self.check_2d("mul_col")?;
        if v.numel() != r {
            return Err(Error::Shape(format!(
                "mul_col: vector len {} vs {} rows",
                v.numel(),
                r
            )));
        }
        let vv = v.data();
        let data: Vec<T> = self
            .data()
            .chunks(c)
            .zip(vv)
            .flat_map(|(row, &y)| row.iter().map(|&x| x * y).collect::<Vec<_>>())
            .collect();
        let x = self.clone();
        let vt = v.clone();
        Tensor::op(
            "mul_col",
            vec![r, c],
            data,
            vec![self.clone(), v.clone()],
            Box::new(move |g| {
                let vv = vt.data();
                let mut dx = Vec::with_capacity(g.len());
                let mut dv = vec![T::zero(); r];
                for (i, (grow, xrow)) in g.chunks(c).zip(x.data().chunks(c)).enumerate() {
                    for j in 0..c {
                        dx.push(grow[j] * vv[i]);
                        dv[i] = dv[i] + grow[j] * xrow[j];
                    }
                }
                vec![Some(dx), Some(dv)]
            }),
        )
    }

    // -----------------------------------------------------------------------
    // reductions
    // -----------------------------------------------------------------------

    pub fn sum_all(&self) -> Result<Tensor<T>> {
        let s: T = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::op(
            "sum_all",
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean_all(&self) -> Result<Tensor<T>> {
        let n = self.numel();
        let inv = T::one() / T::from_f64(n as f64);
        let s: T = self.data().iter().copied().sum::<T>() * inv;
        Tensor::op(
            "mean_all",
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0] * inv; n])]),
        )
    }

    /// Mean along the last axis of a 2-D tensor: [R×C] -> [R].
    pub fn row_mean(&self) -> Result<Tensor<T>> {
        let (r, c) = self.check_2d("row_mean")?;
        let inv = T::one() / T::from_f64(c as f64);
        let data: Vec<T> = self
            .data()
            .chunks(c)
            .map(|row| row.iter().copied().sum::<T>() * inv)
            .collect();
        Tensor::op(
            "row_mean",
            vec![r],
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = Vec::with_capacity(r * c);
                for &gi in g {
                    for _ in 0..c {
                        dx.push(gi * inv);
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    // -----------------------------------------------------------------------
    // softmax
    // -----------------------------------------------------------------------

    /// Softmax along the last axis of a 2-D tensor. Columns flagged in
    /// `masked_cols` receive exactly zero weight in every row.
    pub fn softmax_rows(&self, masked_cols: Option<&[bool]>) -> Result<Tensor<T>> {
        let (r, c) = self.check_2d("softmax_rows")?;
        if let Some(m) = masked_cols {
            if m.len() != c {
                return Err(Error::Shape(format!(
                    "softmax_rows: mask len {} vs {} cols",
                    m.len(),
                    c
                )));
            }
            if m.iter().all(|&x| x) {
                return Err(Error::InvalidArgument(
                    "softmax_rows: all columns masked".into(),
                ));
            }
        }
        let mask: Vec<bool> = masked_cols
            .map(|m| m.to_vec())
            .unwrap_or_else(|| vec![false; c]);
        let mut data = vec![T::zero(); r * c];
        for (row_in, row_out) in self.data().chunks(c).zip(data.chunks_mut(c)) {
            let mut max = T::neg_infinity();
            for (j, &x) in row_in.iter().enumerate() {
                if !mask[j] && x > max {
                    max = x;
                }
            }
            let mut sum = T::zero();
            for j in 0..c {
                if !mask[j] {
                    let e = (row_in[j] - max).exp();
                    row_out[j] = e;
                    sum = sum + e;
                }
            }
            for v in row_out.iter_mut() {
                *v = *v / sum;
            }
        }
        let y = data.clone();
        Tensor::op(
            "softmax_rows",
            vec![r, c],
            data,
            vec![self.clone()],
            Box::new(move |g| {
                // dx = y * (g - sum(g*y)) per row; masked entries have y == 0
                let mut dx = Vec::with_capacity(r * c);
                for (grow, yrow) in g.chunks(c).zip(y.chunks(c)) {
                    let dot: T = grow.iter().zip(yrow).map(|(&gi, &yi)| gi * yi).sum();
                    for (&gi, &yi) in grow.iter().zip(yrow) {
                        dx.push(yi * (gi - dot));
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    // -----------------------------------------------------------------------
    // concatenation, slicing, gather/scatter over rows and columns
    // -----------------------------------------------------------------------

    pub fn concat_rows(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat_rows: empty input".into()));
        }
        let c = parts[0].check_2d("concat_rows")?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        let mut row_counts = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, pc) = p.check_2d("concat_rows")?;
            if pc != c {
                return Err(Error::Shape(format!(
                    "concat_rows: column mismatch {} vs {}",
                    pc, c
                )));
            }
            rows += r;
            row_counts.push(r);
            data.extend_from_slice(p.data());
        }
        Tensor::op(
            "concat_rows",
            vec![rows, c],
            data,
            parts.to_vec(),
            Box::new(move |g| {
                let mut out = Vec::with_capacity(row_counts.len());
                let mut offset = 0;
                for &r in &row_counts {
                    out.push(Some(g[offset * c..(offset + r) * c].to_vec()));
                    offset += r;
                }
                out
            }),
        )
    }

    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Result<Tensor<T>> {
        let (r, c) = self.check_2d("slice_rows")?;
        if range.end > r || range.start >= range.end {
            return Err(Error::Shape(format!(
                "slice_rows: range {:?} out of {} rows",
                range, r
            )));
        }
        let data = self.data()[range.start * c..range.end * c].to_vec();
        let (start, len) = (range.start, range.end - range.start);
        Tensor::op(
            "slice_rows",
            vec![len, c],
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); r * c];
                dx[start * c..(start + len) * c].copy_from_slice(g);
                vec![Some(dx)]
            }),
        )
    }

    pub fn concat_cols(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat_cols: empty input".into()));
        }
        let r = parts[0].check_2d("concat_cols")?.0;
        let mut cols = 0;
        let mut col_counts = Vec::with_capacity(parts.len());
        for p in parts {
            let (pr, pc) = p.check_2d("concat_cols")?;
            if pr != r {
                return Err(Error::Shape(format!(
                    "concat_cols: row mismatch {} vs {}",
                    pr, r
                )));
            }
            cols += pc;
            col_counts.push(pc);
        }
        let mut data = Vec::with_capacity(r * cols);
        for i in 0..r {
            for (p, &pc) in parts.iter().zip(&col_counts) {
                data.extend_from_slice(&p.data()[i * pc..(i + 1) * pc]);
            }
        }
        Tensor::op(
            "concat_cols",
            vec![r, cols],
            data,
            parts.to_vec(),
            Box::new(move |g| {
                let mut out: Vec<Vec<T>> = col_counts
                    .iter()
                    .map(|&pc| Vec::with_capacity(r * pc))
                    .collect();
                for i in 0..r {
                    let mut offset = 0;
                    for (slot, &pc) in out.iter_mut().zip(&col_counts) {
                        slot.extend_from_slice(&g[i * cols + offset..i * cols + offset + pc]);
                        offset += pc;
                    }
                }
                out.into_iter().map(Some).collect()
            }),
        )
    }

    pub fn slice_cols(&self, range: std::ops::Range<usize>) -> Result<Tensor<T>> {
        let (r, c) = self.check_2d("slice_cols")?;
        if range.end > c || range.start >= range.end {
            return Err(Error::Shape(format!(
                "slice_cols: range {:?} out of {} cols",
                range, c
            )));
        }
        let len = range.end - range.start;
        let start = range.start;
        let mut data = Vec::with_capacity(r * len);
        for row in self.data().chunks(c) {
            data.extend_from_slice(&row[start..start + len]);
        }
        Tensor::op(
            "slice_cols",
            vec![r, len],
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); r * c];
                for (i, grow) in g.chunks(len).enumerate() {
                    dx[i * c + start..i * c + start + len].copy_from_slice(grow);
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Select rows by index. Indices may repeat; gradient accumulates.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let (r, c) = self.check_2d("gather_rows")?;
        if indices.is_empty() {
            return Err(Error::InvalidArgument("gather_rows: empty index set".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(Error::Shape(format!(
                "gather_rows: index {} out of {} rows",
                bad, r
            )));
        }
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(&self.data()[i * c..(i + 1) * c]);
        }
        let idx = indices.to_vec();
        Tensor::op(
            "gather_rows",
            vec![indices.len(), c],
            data,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); r * c];
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        dx[i * c + j] = dx[i * c + j] + g[k * c + j];
                    }
                }
                vec![Some(dx)]
            }),
        )
    }

    /// Copy of `self` with row `indices[k]` replaced by row k of `rows`.
    /// Indices must be unique.
    pub fn scatter_rows(&self, indices: &[usize], rows: &Tensor<T>) -> Result<Tensor<T>> {
        let (r, c) = self.check_2d("scatter_rows")?;
        let (nr, rc) = rows.check_2d("scatter_rows")?;
        if rc != c || nr != indices.len() {
            return Err(Error::Shape(format!(
                "scatter_rows: replacement {:?} vs {} indices into [{},{}]",
                rows.shape(),
                indices.len(),
                r,
                c
            )));
        }
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(
                "scatter_rows: duplicate indices".into(),
            ));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(Error::Shape(format!(
                "scatter_rows: index {} out of {} rows",
                bad, r
            )));
        }
        let mut data = self.data().to_vec();
        for (k, &i) in indices.iter().enumerate() {
            data[i * c..(i + 1) * c].copy_from_slice(&rows.data()[k * c..(k + 1) * c]);
        }
        let idx = indices.to_vec();
        Tensor::op(
            "scatter_rows",
            vec![r, c],
            data,
            vec![self.clone(), rows.clone()],
            Box::new(move |g| {
                let mut dbase = g.to_vec();
                let mut drows = Vec::with_capacity(idx.len() * c);
                for &i in &idx {
                    drows.extend_from_slice(&g[i * c..(i + 1) * c]);
                    for v in dbase[i * c..(i + 1) * c].iter_mut() {
                        *v = T::zero();
                    }
                }
                vec![Some(dbase), Some(drows)]
            }),
        )
    }
}

// ---------------------------------------------------------------------------
// composite normalization layers
// ---------------------------------------------------------------------------

/// Normalize each row of `x` to zero mean / unit variance, then apply a
/// per-column affine: layer normalization over the feature axis.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let normed = normalize_rows(x, eps)?;
    normed.mul_row(gamma)?.add_row(beta)
}

/// Normalize each channel (row) over the length axis, per-channel affine:
/// instance normalization for a [C×L] representation.
pub fn instance_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let normed = normalize_rows(x, eps)?;
    normed.mul_col(gamma)?.add_col(beta)
}

fn normalize_rows<T: Scalar>(x: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let mean = x.row_mean()?;
    let centered = x.add_col(&mean.neg()?)?;
    let var = centered.mul(&centered)?.row_mean()?;
    let inv_std = var.add(&Tensor::scalar(eps))?.powf(-T::from_f64(0.5))?;
    centered.mul_col(&inv_std)
}

/// Elementwise mean of a non-empty list of same-shaped tensors.
pub fn mean_tensors<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    if parts.is_empty() {
        return Err(Error::InvalidArgument("mean_tensors: empty input".into()));
    }
    let mut acc = parts[0].clone();
    for p in &parts[1..] {
        acc = acc.add(p)?;
    }
    acc.scale(T::one() / T::from_f64(parts.len() as f64))
}
