//! Differentiable tensor operations.
//!
//! Every op validates shapes up front, computes its forward result into a
//! fresh buffer, and registers a closure that adds the output gradient's
//! contribution into each parent. Hot paths (matmul and friends) are written
//! as row-slice loops so the compiler can vectorize them.

use super::{Inner, Tensor};
use crate::error::{Error, Result};

fn shape_mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        _ => Err(Error::Contract(format!(
            "{op} expects a 2-d tensor, got {:?}",
            t.shape()
        ))),
    }
}

impl Tensor {
    // ----- elementwise -----

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape() != rhs.shape() {
            return Err(shape_mismatch("add", self, rhs));
        }
        let data = self
            .data()
            .iter()
            .zip(rhs.data())
            .map(|(a, b)| a + b)
            .collect();
        let (a, b) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |out: &Inner| {
                let g = out.grad_slice();
                a.accumulate_grad_with(|ga| {
                    for (ga, g) in ga.iter_mut().zip(g.iter()) {
                        *ga += g;
                    }
                });
                b.accumulate_grad_with(|gb| {
                    for (gb, g) in gb.iter_mut().zip(g.iter()) {
                        *gb += g;
                    }
                });
            }),
        ))
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape() != rhs.shape() {
            return Err(shape_mismatch("sub", self, rhs));
        }
        let data = self
            .data()
            .iter()
            .zip(rhs.data())
            .map(|(a, b)| a - b)
            .collect();
        let (a, b) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |out: &Inner| {
                let g = out.grad_slice();
                a.accumulate_grad_with(|ga| {
                    for (ga, g) in ga.iter_mut().zip(g.iter()) {
                        *ga += g;
                    }
                });
                b.accumulate_grad_with(|gb| {
                    for (gb, g) in gb.iter_mut().zip(g.iter()) {
                        *gb -= g;
                    }
                });
            }),
        ))
    }

    /// Hadamard product.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape() != rhs.shape() {
            return Err(shape_mismatch("mul", self, rhs));
        }
        let data = self
            .data()
            .iter()
            .zip(rhs.data())
            .map(|(a, b)| a * b)
            .collect();
        let (a, b) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |out: &Inner| {
                let g = out.grad_slice();
                a.accumulate_grad_with(|ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * b.data()[i];
                    }
                });
                b.accumulate_grad_with(|gb| {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * a.data()[i];
                    }
                });
            }),
        ))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|a| a * c).collect();
        let a = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |out: &Inner| {
                let g = out.grad_slice();
                a.accumulate_grad_with(|ga| {
                    for (ga, g) in ga.iter_mut().zip(g.iter()) {
                        *ga += c * g;
                    }
                });
            }),
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|a| a + c).collect();
        let a = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |out: &Inner| {
                let g = out.grad_slice();
                a.accumulate_grad_with(|ga| {
                    for (ga, g) in ga.iter_mut().zip(g.iter()) {
                        *ga += g;
                    }
                });
            }),
        )
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    /// Adds a vector to every row: `[.., n] + [n]`.
    pub fn add_rowvec(&self, v: &Tensor) -> Result<Tensor> {
        let n = *self.shape().last().ok_or_else(|| {
            Error::Contract("add_rowvec on rank-0 tensor".into())
        })?;
        if v.shape() != [n] {
            return Err(shape_mismatch("add_rowvec", self, v));
        }
        let mut data = self.data().to_vec();
        for row in data.chunks_mut(n) {
            for (x, b) in row.iter_mut().zip(v.data()) {
                *x += b;
            }
        }
        let (a, b) = (self.clone(), v.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), v.clone()],
            Box::new(move |out: &Inner| {
                let g = out.grad_slice();
                a.accumulate_grad_with(|ga| {
                    for (ga, g) in ga.iter_mut().zip(g.iter()) {
                        *ga += g;
                    }
                });
                b.accumulate_grad_with(|gb| {
                    for row in g.chunks(n) {
                        for (gb, g) in gb.iter_mut().zip(row) {
                            *gb += g;
                        }
                    }
                });
            }),
        ))
    }

    /// Scales row `i` of a 2-d tensor by `v[i]`.
    pub fn mul_colvec(&self, v: &Tensor) -> Result<Tensor> {
        let (m, n) = dims2(self, "mul_colvec")?;
        if v.shape() != [m] {
            return Err(shape_mismatch("mul_colvec", self, v));
        }
        let mut data = self.data().to_vec();
        for (i, row) in data.chunks_mut(n).enumerate() {
            let s = v.data()[i];
            for x in row.iter_mut() {
                *x *= s;
            }
        }
        let (a, b) = (self.clone(), v.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), v.clone()],
            Box::new(move |out: &Inner| {
                let g = out.grad_slice();
                a.accumulate_grad_with(|ga| {
                    for i in 0..m {
                        let s = b.data()[i];
                        for j in 0..n {
                            ga[i * n + j] += g[i * n + j] * s;
                        }
                    }
                });
                b.accumulate_grad_with(|gb| {
                    for i in 0..m {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * a.data()[i * n + j];
                        }
                        gb[i] += s;
                    }
                });
            }),
        ))
    }

    /// Broadcast-multiplies by a single-element tensor (differentiable gate).
    pub fn mul_scalar_tensor(&self, s: &Tensor) -> Result<Tensor> {
        if s.len() != 1 {
            return Err(shape_mismatch("mul_scalar_tensor", self, s));
        }
        let sv = s.data()[0];
        let data = self.data().iter().map(|a| a * sv).collect();
        let (a, b) = (self.clone(), s.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), s.clone()],
            Box::new(move |out: &Inner| {
                let g = out.grad_slice();
                a.accumulate_grad_with(|ga| {
                    for (ga, g) in ga.iter_mut().zip(g.iter()) {
                        *ga += sv * g;
                    }
                });
                b.accumulate_grad_with(|gb| {
                    let mut acc = 0.0;
                    for (g, x) in g.iter().zip(a.data()) {
                        acc += g * x;
                    }
                    gb[0] += acc;
                });
            }),
        ))
    }

    // ----- nonlinearities -----

    pub fn silu(&self) -> Tensor {
        let data: Vec<f64> = self
            .data()
            .iter()
            .map(|&x| x / (1.0 + (-x).exp()))
            .collect();
        let a = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |out: &Inner| {
                let g = out.grad_slice();
                a.accumulate_grad_with(|ga| {
                    for i in 0..ga.len() {
                        let x = a.data()[i];
                        let sig = 1.0 / (1.0 + (-x).exp());
                        ga[i] += g[i] * sig * (1.0 + x * (1.0 - sig));
                    }
                });
            }),
        )
    }

    pub fn tanh(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| x.tanh()).collect();
        let a = self.clone();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |out: &Inner| {
                let g = out.grad_slice();
                let y = &out.data;
                a.accumulate_grad_with(|ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }),
        )
    }

    // ----- matrix products -----

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = dims2(self, "matmul")?;
        let (k2, n) = dims2(rhs, "matmul")?;
        if k != k2 {
            return Err(shape_mismatch("matmul", self, rhs));
        }
        let a = self.data();
        let b = rhs.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (kk, &aik) in arow.iter().enumerate() {
                let brow = &b[kk * n..(kk + 1) * n];
                for j in 0..n {
                    orow[j] += aik * brow[j];
                }
            }
        }
        let (ac, bc) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |out: &Inner| {
                let g = out.grad_slice();
                // dA = dC . B^T
                ac.accumulate_grad_with(|ga| {
                    let b = bc.data();
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let garow = &mut ga[i * k..(i + 1) * k];
                        for kk in 0..k {
                            let brow = &b[kk * n..(kk + 1) * n];
                            let mut s = 0.0;
                            for j in 0..n {
                                s += grow[j] * brow[j];
                            }
                            garow[kk] += s;
                        }
                    }
                });
                // dB = A^T . dC
                bc.accumulate_grad_with(|gb| {
                    let a = ac.data();
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let arow = &a[i * k..(i + 1) * k];
                        for (kk, &aik) in arow.iter().enumerate() {
                            let gbrow = &mut gb[kk * n..(kk + 1) * n];
                            for j in 0..n {
                                gbrow[j] += aik * grow[j];
                            }
                        }
                    }
                });
            }),
        ))
    }

    /// `[m, d] x [n, d]^T -> [m, n]` without materializing the transpose.
    pub fn matmul_nt(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, d) = dims2(self, "matmul_nt")?;
        let (n, d2) = dims2(rhs, "matmul_nt")?;
        if d != d2 {
            return Err(shape_mismatch("matmul_nt", self, rhs));
        }
        let a = self.data();
        let b = rhs.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &a[i * d..(i + 1) * d];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                let brow = &b[j * d..(j + 1) * d];
                let mut s = 0.0;
                for kk in 0..d {
                    s += arow[kk] * brow[kk];
                }
                orow[j] = s;
            }
        }
        let (ac, bc) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(move |out: &Inner| {
                let g = out.grad_slice();
                // dA = dC . B
                ac.accumulate_grad_with(|ga| {
                    let b = bc.data();
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let garow = &mut ga[i * d..(i + 1) * d];
                        for (j, &gij) in grow.iter().enumerate() {
                            let brow = &b[j * d..(j + 1) * d];
                            for kk in 0..d {
                                garow[kk] += gij * brow[kk];
                            }
                        }
                    }
                });
                // dB = dC^T . A
                bc.accumulate_grad_with(|gb| {
                    let a = ac.data();
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        let arow = &a[i * d..(i + 1) * d];
                        for (j, &gij) in grow.iter().enumerate() {
                            let gbrow = &mut gb[j * d..(j + 1) * d];
                            for kk in 0..d {
                                gbrow[kk] += gij * arow[kk];
                            }
                        }
                    }
                });
            }),
        ))
    }

    pub fn transpose2d(&self) -> Result<Tensor> {
        let (m, n) = dims2(self, "transpose2d")?;
        let a = self.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = a[i * n + j];
            }
        }
        let ac = self.clone();
        Ok(Tensor::from_op(
            vec![n, m],
            out,
            vec![self.clone()],
            Box::new(move |out: &Inner| {
                let g = out.grad_slice();
                ac.accumulate_grad_with(|ga| {
                    for j in 0..n {
                        for i in 0..m {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                });
            }),
        ))
    }

    // ----- normalization -----

    /// Softmax over the last axis, numerically stabilized by the row max.
    pub fn softmax_lastdim(&self) -> Result<Tensor> {
        let d = *self
            .shape()
            .last()
            .ok_or_else(|| Error::Contract("softmax on rank-0 tensor".into()))?;
        if d == 0 {
            return Err(Error::Contract("softmax over empty axis".into()));
        }
        let mut data = vec![0.0; self.len()];
        for (row_in, row_out) in self.data().chunks(d).zip(data.chunks_mut(d)) {
            let max = row_in.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &x) in row_out.iter_mut().zip(row_in) {
                *o = (x - max).exp();
                sum += *o;
            }
            for o in row_out.iter_mut() {
                *o /= sum;
            }
        }
        let a = self.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |out: &Inner| {
                let g = out.grad_slice();
                let y = &out.data;
                a.accumulate_grad_with(|ga| {
                    for s in 0..y.len() / d {
                        let y = &y[s * d..(s + 1) * d];
                        let g = &g[s * d..(s + 1) * d];
                        let ga = &mut ga[s * d..(s + 1) * d];
                        let mut dot = 0.0;
                        for j in 0..d {
                            dot += g[j] * y[j];
                        }
                        for j in 0..d {
                            ga[j] += y[j] * (g[j] - dot);
                        }
                    }
                });
            }),
        ))
    }

    /// Layer normalization over the last axis with affine gain/bias.
    ///
    /// Uses population variance and epsilon 1e-5 inside the square root.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
        const EPS: f64 = 1e-5;
        let d = *self
            .shape()
            .last()
            .ok_or_else(|| Error::Contract("layer_norm on rank-0 tensor".into()))?;
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(Error::Contract(format!(
                "layer_norm: gain {:?} / bias {:?} vs last dim {}",
                gain.shape(),
                bias.shape(),
                d
            )));
        }
        let slices = self.len() / d;
        let mut data = vec![0.0; self.len()];
        let mut means = vec![0.0; slices];
        let mut inv_stds = vec![0.0; slices];
        for s in 0..slices {
            let x = &self.data()[s * d..(s + 1) * d];
            let mean = x.iter().sum::<f64>() / d as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / (var + EPS).sqrt();
            means[s] = mean;
            inv_stds[s] = inv_std;
            let out = &mut data[s * d..(s + 1) * d];
            for j in 0..d {
                out[j] = (x[j] - mean) * inv_std * gain.data()[j] + bias.data()[j];
            }
        }
        let (xc, gc, bc) = (self.clone(), gain.clone(), bias.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), gain.clone(), bias.clone()],
            Box::new(move |out: &Inner| {
                let g = out.grad_slice();
                let d_f = d as f64;
                xc.accumulate_grad_with(|gx| {
                    let gaind = gc.data();
                    for s in 0..slices {
                        let x = &xc.data()[s * d..(s + 1) * d];
                        let g = &g[s * d..(s + 1) * d];
                        let gx = &mut gx[s * d..(s + 1) * d];
                        let (mean, inv_std) = (means[s], inv_stds[s]);
                        let mut sum_dh = 0.0;
                        let mut sum_dh_xhat = 0.0;
                        for j in 0..d {
                            let xhat = (x[j] - mean) * inv_std;
                            let dh = g[j] * gaind[j];
                            sum_dh += dh;
                            sum_dh_xhat += dh * xhat;
                        }
                        for j in 0..d {
                            let xhat = (x[j] - mean) * inv_std;
                            let dh = g[j] * gaind[j];
                            gx[j] +=
                                inv_std * (dh - sum_dh / d_f - xhat * sum_dh_xhat / d_f);
                        }
                    }
                });
                gc.accumulate_grad_with(|gg| {
                    for s in 0..slices {
                        let x = &xc.data()[s * d..(s + 1) * d];
                        let g = &g[s * d..(s + 1) * d];
                        let (mean, inv_std) = (means[s], inv_stds[s]);
                        for j in 0..d {
                            gg[j] += g[j] * (x[j] - mean) * inv_std;
                        }
                    }
                });
                bc.accumulate_grad_with(|gb| {
                    for s in 0..slices {
                        let g = &g[s * d..(s + 1) * d];
                        for j in 0..d {
                            gb[j] += g[j];
                        }
                    }
                });
            }),
        ))
    }

    // ----- reductions -----

    pub fn sum_all(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let a = self.clone();
        Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |out: &Inner| {
                let g = out.grad_slice()[0];
                a.accumulate_grad_with(|ga| {
                    for v in ga.iter_mut() {
                        *v += g;
                    }
                });
            }),
        )
    }

    pub fn mean_all(&self) -> Tensor {
        let n = self.len() as f64;
        let s: f64 = self.data().iter().sum();
        let a = self.clone();
        Tensor::from_op(
            vec![1],
            vec![s / n],
            vec![self.clone()],
            Box::new(move |out: &Inner| {
                let g = out.grad_slice()[0] / n;
                a.accumulate_grad_with(|ga| {
                    for v in ga.iter_mut() {
                        *v += g;
                    }
                });
            }),
        )
    }

    // ----- shape ops -----

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let want: usize = shape.iter().product();
        if want != self.len() {
            return Err(Error::Contract(format!(
                "reshape {:?} -> {:?}",
                self.shape(),
                shape
            )));
        }
        let a = self.clone();
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.data().to_vec(),
            vec![self.clone()],
            Box::new(move |out: &Inner| {
                let g = out.grad_slice();
                a.accumulate_grad_with(|ga| {
                    for (ga, g) in ga.iter_mut().zip(g.iter()) {
                        *ga += g;
                    }
                });
            }),
        ))
    }

    /// Concatenation along axis 0. All parts must share trailing dimensions.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_rows of zero tensors".into()));
        }
        let tail = &parts[0].shape()[1..];
        let mut rows = 0;
        for p in parts {
            if p.shape().is_empty() || &p.shape()[1..] != tail {
                return Err(Error::Contract(format!(
                    "concat_rows: trailing dims differ ({:?} vs {:?})",
                    parts[0].shape(),
                    p.shape()
                )));
            }
            rows += p.shape()[0];
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(tail);
        let mut data = Vec::with_capacity(shape.iter().product());
        for p in parts {
            data.extend_from_slice(p.data());
        }
        let owned: Vec<Tensor> = parts.to_vec();
        Ok(Tensor::from_op(
            shape,
            data,
            parts.to_vec(),
            Box::new(move |out: &Inner| {
                let g = out.grad_slice();
                let mut off = 0;
                for p in &owned {
                    let len = p.len();
                    let seg = &g[off..off + len];
                    p.accumulate_grad_with(|gp| {
                        for (gp, g) in gp.iter_mut().zip(seg) {
                            *gp += g;
                        }
                    });
                    off += len;
                }
            }),
        ))
    }

    /// Stacks 1-d tensors of equal length into a matrix.
    pub fn stack_rows(parts: &[Tensor]) -> Result<Tensor> {
        let reshaped: Vec<Tensor> = parts
            .iter()
            .map(|p| {
                if p.shape().len() != 1 {
                    return Err(Error::Contract(format!(
                        "stack_rows expects 1-d parts, got {:?}",
                        p.shape()
                    )));
                }
                p.reshape(&[1, p.len()])
            })
            .collect::<Result<_>>()?;
        Tensor::concat_rows(&reshaped)
    }

    /// Rows `[r0, r1)` along axis 0 (contiguous chunk).
    pub fn slice_rows(&self, r0: usize, r1: usize) -> Result<Tensor> {
        if self.shape().is_empty() {
            return Err(Error::Contract("slice_rows on rank-0 tensor".into()));
        }
        let rows = self.shape()[0];
        if r0 > r1 || r1 > rows {
            return Err(Error::IndexOutOfRange {
                what: "slice_rows",
                index: r1,
                bound: rows,
            });
        }
        let row_size: usize = self.shape()[1..].iter().product::<usize>().max(1);
        let mut shape = self.shape().to_vec();
        shape[0] = r1 - r0;
        let data = self.data()[r0 * row_size..r1 * row_size].to_vec();
        let a = self.clone();
        Ok(Tensor::from_op(
            shape,
            data,
            vec![self.clone()],
            Box::new(move |out: &Inner| {
                let g = out.grad_slice();
                a.accumulate_grad_with(|ga| {
                    let dst = &mut ga[r0 * row_size..r1 * row_size];
                    for (d, g) in dst.iter_mut().zip(g.iter()) {
                        *d += g;
                    }
                });
            }),
        ))
    }

    /// Gathers rows of a 2-d tensor by index; repeats are allowed and their
    /// gradients accumulate.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Tensor> {
        let (rows, cols) = dims2(self, "gather_rows")?;
        for &i in idx {
            if i >= rows {
                return Err(Error::IndexOutOfRange {
                    what: "gather_rows",
                    index: i,
                    bound: rows,
                });
            }
        }
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(&self.data()[i * cols..(i + 1) * cols]);
        }
        let a = self.clone();
        let idx = idx.to_vec();
        Ok(Tensor::from_op(
            vec![idx.len(), cols],
            data,
            vec![self.clone()],
            Box::new(move |out: &Inner| {
                let g = out.grad_slice();
                a.accumulate_grad_with(|ga| {
                    for (k, &i) in idx.iter().enumerate() {
                        let src = &g[k * cols..(k + 1) * cols];
                        let dst = &mut ga[i * cols..(i + 1) * cols];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                });
            }),
        ))
    }

    /// Columns `[c0, c1)` of a 2-d tensor.
    pub fn slice_cols(&self, c0: usize, c1: usize) -> Result<Tensor> {
        let (rows, cols) = dims2(self, "slice_cols")?;
        if c0 > c1 || c1 > cols {
            return Err(Error::IndexOutOfRange {
                what: "slice_cols",
                index: c1,
                bound: cols,
            });
        }
        let w = c1 - c0;
        let mut data = Vec::with_capacity(rows * w);
        for i in 0..rows {
            data.extend_from_slice(&self.data()[i * cols + c0..i * cols + c1]);
        }
        let a = self.clone();
        Ok(Tensor::from_op(
            vec![rows, w],
            data,
            vec![self.clone()],
            Box::new(move |out: &Inner| {
                let g = out.grad_slice();
                a.accumulate_grad_with(|ga| {
                    for i in 0..rows {
                        let src = &g[i * w..(i + 1) * w];
                        let dst = &mut ga[i * cols + c0..i * cols + c1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                });
            }),
        ))
    }

    /// Concatenates 2-d tensors along axis 1.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_cols of zero tensors".into()));
        }
        let rows = parts[0].shape()[0];
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        for p in parts {
            let (r, c) = dims2(p, "concat_cols")?;
            if r != rows {
                return Err(Error::Contract(format!(
                    "concat_cols: row counts differ ({rows} vs {r})"
                )));
            }
            widths.push(c);
            total += c;
        }
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[i * w..(i + 1) * w]);
            }
        }
        let owned: Vec<Tensor> = parts.to_vec();
        Ok(Tensor::from_op(
            vec![rows, total],
            data,
            parts.to_vec(),
            Box::new(move |out: &Inner| {
                let g = out.grad_slice();
                let mut c0 = 0;
                for (p, &w) in owned.iter().zip(&widths) {
                    p.accumulate_grad_with(|gp| {
                        for i in 0..rows {
                            let src = &g[i * total + c0..i * total + c0 + w];
                            let dst = &mut gp[i * w..(i + 1) * w];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    });
                    c0 += w;
                }
            }),
        ))
    }
}
