//! Forward and backward kernels on raw tensors.
//!
//! Every function here is pure; the graph in `graph.rs` records which kernel
//! produced a node and calls the matching gradient kernel during backward.

use serde::{Deserialize, Serialize};

use super::tensor::{broadcast_offsets, broadcast_shape, strides, Tensor};
use crate::error::{dim_err, Error, Result};

/// `c[m×n] = a[m×k]·b[k×n] + beta·c` with arbitrary element strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
    c_strides: (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            for i in 0..m {
                for j in 0..n {
                    c[i * c_strides.0 + j * c_strides.1] = 0.0;
                }
            }
        }
        return;
    }
    debug_assert!((m - 1) * a_strides.0 + (k - 1) * a_strides.1 < a.len());
    debug_assert!((k - 1) * b_strides.0 + (n - 1) * b_strides.1 < b.len());
    debug_assert!((m - 1) * c_strides.0 + (n - 1) * c_strides.1 < c.len());
    // SAFETY: the asserted extents keep every access inside the three slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            c_strides.0 as isize,
            c_strides.1 as isize,
        );
    }
}

struct MatmulLayout {
    m: usize,
    k: usize,
    n: usize,
    out_shape: Vec<usize>,
    a_batch: Vec<usize>,
    b_batch: Vec<usize>,
}

fn matmul_layout(a: &[usize], b: &[usize]) -> Result<MatmulLayout> {
    if a.len() < 2 || b.len() < 2 {
        return Err(dim_err("matmul", a, b));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(dim_err("matmul", a, b));
    }
    let lead_a = &a[..a.len() - 2];
    let lead_b = &b[..b.len() - 2];
    let lead = broadcast_shape(lead_a, lead_b).ok_or_else(|| dim_err("matmul", a, b))?;
    let a_batch = broadcast_offsets(lead_a, &lead);
    let b_batch = broadcast_offsets(lead_b, &lead);
    let mut out_shape = lead;
    out_shape.extend([m, n]);
    Ok(MatmulLayout {
        m,
        k,
        n,
        out_shape,
        a_batch,
        b_batch,
    })
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let l = matmul_layout(a.shape(), b.shape())?;
    let mut out = Tensor::zeros(&l.out_shape);
    let (m, k, n) = (l.m, l.k, l.n);
    for (bi, (&oa, &ob)) in l.a_batch.iter().zip(&l.b_batch).enumerate() {
        gemm(
            m,
            k,
            n,
            &a.data()[oa * m * k..],
            (k, 1),
            &b.data()[ob * k * n..],
            (n, 1),
            0.0,
            &mut out.data_mut()[bi * m * n..],
            (n, 1),
        );
    }
    Ok(out)
}

pub(crate) fn matmul_backward(a: &Tensor, b: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let l = matmul_layout(a.shape(), b.shape()).expect("validated in forward");
    let (m, k, n) = (l.m, l.k, l.n);
    let mut ga = Tensor::zeros(a.shape());
    let mut gb = Tensor::zeros(b.shape());
    for (bi, (&oa, &ob)) in l.a_batch.iter().zip(&l.b_batch).enumerate() {
        let gs = &g.data()[bi * m * n..];
        // ga = g · bᵀ
        gemm(
            m,
            n,
            k,
            gs,
            (n, 1),
            &b.data()[ob * k * n..],
            (1, n),
            1.0,
            &mut ga.data_mut()[oa * m * k..],
            (k, 1),
        );
        // gb = aᵀ · g
        gemm(
            k,
            m,
            n,
            &a.data()[oa * m * k..],
            (1, k),
            gs,
            (n, 1),
            1.0,
            &mut gb.data_mut()[ob * k * n..],
            (n, 1),
        );
    }
    (ga, gb)
}

/// `x[.., in]·w[in, out] + bias[out]`.
pub fn linear(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let xs = x.shape();
    if w.rank() != 2 || xs.is_empty() || xs[xs.len() - 1] != w.shape()[0] {
        return Err(dim_err("linear", xs, w.shape()));
    }
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    if let Some(b) = bias {
        if b.shape() != [dout] {
            return Err(dim_err("linear bias", w.shape(), b.shape()));
        }
    }
    let rows = x.len() / din.max(1);
    let mut shape = xs.to_vec();
    *shape.last_mut().unwrap() = dout;
    let mut out = Tensor::zeros(&shape);
    if let Some(b) = bias {
        for row in out.data_mut().chunks_mut(dout) {
            row.copy_from_slice(b.data());
        }
    }
    let beta = if bias.is_some() { 1.0 } else { 0.0 };
    gemm(
        rows,
        din,
        dout,
        x.data(),
        (din, 1),
        w.data(),
        (dout, 1),
        beta,
        out.data_mut(),
        (dout, 1),
    );
    Ok(out)
}

pub(crate) fn linear_backward(
    x: &Tensor,
    w: &Tensor,
    g: &Tensor,
    with_bias: bool,
) -> (Tensor, Tensor, Option<Tensor>) {
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    let rows = x.len() / din.max(1);
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(w.shape());
    gemm(
        rows,
        dout,
        din,
        g.data(),
        (dout, 1),
        w.data(),
        (1, dout),
        0.0,
        gx.data_mut(),
        (din, 1),
    );
    gemm(
        din,
        rows,
        dout,
        x.data(),
        (1, din),
        g.data(),
        (dout, 1),
        0.0,
        gw.data_mut(),
        (dout, 1),
    );
    let gb = with_bias.then(|| {
        let mut gb = Tensor::zeros(&[dout]);
        for row in g.data().chunks(dout) {
            for (acc, v) in gb.data_mut().iter_mut().zip(row) {
                *acc += v;
            }
        }
        gb
    });
    (gx, gw, gb)
}

/// Pointwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Elementwise {
    Exp,
    Silu,
    Softplus,
    Sigmoid,
    /// `-exp(x)`, used to keep the state transition strictly negative.
    NegExp,
    Log,
    Square,
    Relu,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)`, linear above 30.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl Elementwise {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Exp => x.exp(),
            Self::Silu => x * sigmoid(x),
            Self::Softplus => softplus(x),
            Self::Sigmoid => sigmoid(x),
            Self::NegExp => -x.exp(),
            Self::Log => x.ln(),
            Self::Square => x * x,
            Self::Relu => x.max(0.0),
        }
    }

    /// Derivative at input `x` with output `y`.
    pub(crate) fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Self::Exp | Self::NegExp => y,
            Self::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Self::Softplus => {
                if x > 30.0 {
                    1.0
                } else {
                    sigmoid(x)
                }
            }
            Self::Sigmoid => y * (1.0 - y),
            Self::Log => 1.0 / x,
            Self::Square => 2.0 * x,
            Self::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

pub fn elementwise(kind: Elementwise, x: &Tensor) -> Tensor {
    x.map(|v| kind.apply(v))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    Sum,
    Mean,
    Max,
}

/// Split a shape around `axis` into (outer, axis length, inner).
fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::Axis {
            axis,
            rank: shape.len(),
        });
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Reduce over `axis`, removing it. For `Max`, also returns the winning index
/// along the axis for each output element (lowest index on ties).
pub fn reduce(kind: Reduction, x: &Tensor, axis: usize) -> Result<(Tensor, Vec<usize>)> {
    let (outer, len, inner) = split_axis(x.shape(), axis)?;
    if len == 0 {
        return Err(Error::EmptyAxis);
    }
    let mut shape = x.shape().to_vec();
    shape.remove(axis);
    let mut out = Tensor::zeros(&shape);
    let mut argmax = Vec::new();
    let d = x.data();
    match kind {
        Reduction::Sum | Reduction::Mean => {
            for o in 0..outer {
                for a in 0..len {
                    let src = &d[(o * len + a) * inner..][..inner];
                    let dst = &mut out.data_mut()[o * inner..][..inner];
                    for (acc, v) in dst.iter_mut().zip(src) {
                        *acc += v;
                    }
                }
            }
            if kind == Reduction::Mean {
                let s = 1.0 / len as f64;
                out.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
        Reduction::Max => {
            argmax = vec![0; outer * inner];
            for o in 0..outer {
                for i in 0..inner {
                    let mut best = d[o * len * inner + i];
                    let mut at = 0;
                    for a in 1..len {
                        let v = d[(o * len + a) * inner + i];
                        if v > best {
                            best = v;
                            at = a;
                        }
                    }
                    out.data_mut()[o * inner + i] = best;
                    argmax[o * inner + i] = at;
                }
            }
        }
    }
    Ok((out, argmax))
}

pub(crate) fn reduce_backward(
    kind: Reduction,
    input_shape: &[usize],
    axis: usize,
    argmax: &[usize],
    g: &Tensor,
) -> Tensor {
    let (outer, len, inner) = split_axis(input_shape, axis).expect("validated in forward");
    let mut gx = Tensor::zeros(input_shape);
    let gd = g.data();
    let out = gx.data_mut();
    match kind {
        Reduction::Sum | Reduction::Mean => {
            let s = if kind == Reduction::Mean {
                1.0 / len as f64
            } else {
                1.0
            };
            for o in 0..outer {
                for a in 0..len {
                    for i in 0..inner {
                        out[(o * len + a) * inner + i] = gd[o * inner + i] * s;
                    }
                }
            }
        }
        Reduction::Max => {
            for o in 0..outer {
                for i in 0..inner {
                    let a = argmax[o * inner + i];
                    out[(o * len + a) * inner + i] = gd[o * inner + i];
                }
            }
        }
    }
    gx
}

/// Depthwise causal convolution over the sequence axis of `x[N, J, C]`.
///
/// `y[n, j, c] = bias[c] + Σ_m x[n, j + m − K + 1, c]·kernel[c, m]`, with
/// positions before the start of the sequence read as zero.
pub fn causal_conv(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let xs = x.shape();
    if xs.len() != 3 || kernel.rank() != 2 || kernel.shape()[0] != xs[2] {
        return Err(dim_err("depthwise_causal_conv", xs, kernel.shape()));
    }
    if bias.shape() != [xs[2]] {
        return Err(dim_err("depthwise_causal_conv bias", kernel.shape(), bias.shape()));
    }
    let (n, j, c) = (xs[0], xs[1], xs[2]);
    let k = kernel.shape()[1];
    if k == 0 {
        return Err(Error::InvalidArgument("kernel size must be at least 1".into()));
    }
    let mut out = Tensor::zeros(xs);
    let (xd, kd, bd) = (x.data(), kernel.data(), bias.data());
    let od = out.data_mut();
    for b in 0..n {
        for t in 0..j {
            let dst = &mut od[(b * j + t) * c..][..c];
            dst.copy_from_slice(bd);
            for m in 0..k {
                let Some(src_t) = (t + m + 1).checked_sub(k) else {
                    continue;
                };
                let src = &xd[(b * j + src_t) * c..][..c];
                for ch in 0..c {
                    dst[ch] += src[ch] * kd[ch * k + m];
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn causal_conv_backward(
    x: &Tensor,
    kernel: &Tensor,
    g: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let xs = x.shape();
    let (n, j, c) = (xs[0], xs[1], xs[2]);
    let k = kernel.shape()[1];
    let mut gx = Tensor::zeros(xs);
    let mut gk = Tensor::zeros(kernel.shape());
    let mut gb = Tensor::zeros(&[c]);
    let (xd, kd, gd) = (x.data(), kernel.data(), g.data());
    for b in 0..n {
        for t in 0..j {
            let gy = &gd[(b * j + t) * c..][..c];
            for ch in 0..c {
                gb.data_mut()[ch] += gy[ch];
            }
            for m in 0..k {
                let Some(src_t) = (t + m + 1).checked_sub(k) else {
                    continue;
                };
                let base = (b * j + src_t) * c;
                for ch in 0..c {
                    gk.data_mut()[ch * k + m] += gy[ch] * xd[base + ch];
                    gx.data_mut()[base + ch] += gy[ch] * kd[ch * k + m];
                }
            }
        }
    }
    (gx, gk, gb)
}

/// RMS normalization over the last axis.
pub fn rmsnorm(x: &Tensor, weight: &Tensor, eps: f64) -> Result<Tensor> {
    let d = *x.shape().last().ok_or_else(|| dim_err("rmsnorm", x.shape(), weight.shape()))?;
    if weight.shape() != [d] {
        return Err(dim_err("rmsnorm", x.shape(), weight.shape()));
    }
    let mut out = Tensor::zeros(x.shape());
    for (src, dst) in x.data().chunks(d).zip(out.data_mut().chunks_mut(d)) {
        let r = inv_rms(src, eps);
        for ((o, &v), &w) in dst.iter_mut().zip(src).zip(weight.data()) {
            *o = v * r * w;
        }
    }
    Ok(out)
}

fn inv_rms(row: &[f64], eps: f64) -> f64 {
    let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
    1.0 / (ms + eps).sqrt()
}

pub(crate) fn rmsnorm_backward(
    x: &Tensor,
    weight: &Tensor,
    eps: f64,
    g: &Tensor,
) -> (Tensor, Tensor) {
    let d = weight.len();
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(&[d]);
    let w = weight.data();
    for ((src, gy), gdst) in x
        .data()
        .chunks(d)
        .zip(g.data().chunks(d))
        .zip(gx.data_mut().chunks_mut(d))
    {
        let r = inv_rms(src, eps);
        let dot: f64 = (0..d).map(|i| gy[i] * w[i] * src[i]).sum();
        let coef = r * r * r * dot / d as f64;
        for i in 0..d {
            gdst[i] = r * w[i] * gy[i] - coef * src[i];
            gw.data_mut()[i] += gy[i] * src[i] * r;
        }
    }
    (gx, gw)
}

/// Layer normalization over the last axis with affine weight and bias.
pub fn layernorm(x: &Tensor, weight: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let d = *x.shape().last().ok_or_else(|| dim_err("layernorm", x.shape(), weight.shape()))?;
    if weight.shape() != [d] || bias.shape() != [d] {
        return Err(dim_err("layernorm", x.shape(), weight.shape()));
    }
    let mut out = Tensor::zeros(x.shape());
    for (src, dst) in x.data().chunks(d).zip(out.data_mut().chunks_mut(d)) {
        let (mean, inv) = moments(src, eps);
        for i in 0..d {
            dst[i] = (src[i] - mean) * inv * weight.data()[i] + bias.data()[i];
        }
    }
    Ok(out)
}

fn moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

pub(crate) fn layernorm_backward(
    x: &Tensor,
    weight: &Tensor,
    eps: f64,
    g: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let d = weight.len();
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(&[d]);
    let mut gb = Tensor::zeros(&[d]);
    let w = weight.data();
    for ((src, gy), gdst) in x
        .data()
        .chunks(d)
        .zip(g.data().chunks(d))
        .zip(gx.data_mut().chunks_mut(d))
    {
        let (mean, inv) = moments(src, eps);
        let mut sum_gh = 0.0;
        let mut sum_gh_xhat = 0.0;
        for i in 0..d {
            let xhat = (src[i] - mean) * inv;
            let gh = gy[i] * w[i];
            sum_gh += gh;
            sum_gh_xhat += gh * xhat;
            gw.data_mut()[i] += gy[i] * xhat;
            gb.data_mut()[i] += gy[i];
        }
        let dn = d as f64;
        for i in 0..d {
            let xhat = (src[i] - mean) * inv;
            gdst[i] = inv * (gy[i] * w[i] - sum_gh / dn - xhat * sum_gh_xhat / dn);
        }
    }
    (gx, gw, gb)
}

/// Softmax over the last axis.
pub fn softmax(x: &Tensor) -> Tensor {
    let d = x.shape().last().copied().unwrap_or(1).max(1);
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(d) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}

pub(crate) fn softmax_backward(y: &Tensor, g: &Tensor) -> Tensor {
    let d = y.shape().last().copied().unwrap_or(1).max(1);
    let mut gx = Tensor::zeros(y.shape());
    for ((yr, gr), dst) in y
        .data()
        .chunks(d)
        .zip(g.data().chunks(d))
        .zip(gx.data_mut().chunks_mut(d))
    {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for i in 0..d {
            dst[i] = yr[i] * (gr[i] - dot);
        }
    }
    gx
}

/// Inputs of the selective scan.
///
/// Shapes: `u`, `delta` are `[N, J, E]`; `a` is `[E, S]`; `b`, `c` are
/// `[N, J, S]`; `alpha` is `[E]`.
pub struct ScanInputs<'a> {
    pub u: &'a Tensor,
    pub delta: &'a Tensor,
    pub a: &'a Tensor,
    pub b: &'a Tensor,
    pub c: &'a Tensor,
    pub alpha: &'a Tensor,
}

impl ScanInputs<'_> {
    fn dims(&self) -> Result<(usize, usize, usize, usize)> {
        let us = self.u.shape();
        if us.len() != 3 {
            return Err(dim_err("selective_scan", us, self.a.shape()));
        }
        let (n, j, e) = (us[0], us[1], us[2]);
        if self.a.rank() != 2 || self.a.shape()[0] != e {
            return Err(dim_err("selective_scan A", us, self.a.shape()));
        }
        let s = self.a.shape()[1];
        if self.delta.shape() != us {
            return Err(dim_err("selective_scan delta", us, self.delta.shape()));
        }
        for t in [self.b, self.c] {
            if t.shape() != [n, j, s] {
                return Err(dim_err("selective_scan B/C", &[n, j, s], t.shape()));
            }
        }
        if self.alpha.shape() != [e] {
            return Err(dim_err("selective_scan alpha", &[e], self.alpha.shape()));
        }
        Ok((n, j, e, s))
    }
}

/// Sequential selective scan.
///
/// With `h_0 = 0`, for every position `j`:
/// `h_j = exp(Δ_j ⊙ A) ⊙ h_{j−1} + (Δ_j ⊙ B_j) ⊙ u_j` and
/// `y_j = Σ_s h_j[·, s]·C_j[s] + α ⊙ u_j`.
pub fn selective_scan(inp: &ScanInputs<'_>) -> Result<Tensor> {
    let (n, j, e, s) = inp.dims()?;
    let mut out = Tensor::zeros(&[n, j, e]);
    let mut h = vec![0.0; e * s];
    let (u, dt, a, b, c, alpha) = (
        inp.u.data(),
        inp.delta.data(),
        inp.a.data(),
        inp.b.data(),
        inp.c.data(),
        inp.alpha.data(),
    );
    let od = out.data_mut();
    for bi in 0..n {
        h.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..j {
            let row = (bi * j + t) * e;
            let bs = &b[(bi * j + t) * s..][..s];
            let cs = &c[(bi * j + t) * s..][..s];
            for ch in 0..e {
                let d = dt[row + ch];
                let x = u[row + ch];
                let hr = &mut h[ch * s..][..s];
                let ar = &a[ch * s..][..s];
                let mut y = 0.0;
                for st in 0..s {
                    hr[st] = (d * ar[st]).exp() * hr[st] + d * bs[st] * x;
                    y += hr[st] * cs[st];
                }
                od[row + ch] = y + alpha[ch] * x;
            }
        }
    }
    Ok(out)
}

/// Gradients of the selective scan, in the order (u, delta, a, b, c, alpha).
///
/// Hidden states are recomputed one sequence at a time rather than stored
/// during the forward pass.
pub(crate) fn selective_scan_backward(inp: &ScanInputs<'_>, g: &Tensor) -> [Tensor; 6] {
    let (n, j, e, s) = inp.dims().expect("validated in forward");
    let (u, dt, a, b, c, alpha) = (
        inp.u.data(),
        inp.delta.data(),
        inp.a.data(),
        inp.b.data(),
        inp.c.data(),
        inp.alpha.data(),
    );
    let gd = g.data();
    let mut gu = Tensor::zeros(&[n, j, e]);
    let mut gdt = Tensor::zeros(&[n, j, e]);
    let mut ga = Tensor::zeros(&[e, s]);
    let mut gbt = Tensor::zeros(&[n, j, s]);
    let mut gct = Tensor::zeros(&[n, j, s]);
    let mut galpha = Tensor::zeros(&[e]);
    // States h_0..h_J for one sequence; h_0 = 0.
    let mut hs = vec![0.0; (j + 1) * e * s];
    let mut gh = vec![0.0; e * s];
    for bi in 0..n {
        hs[..e * s].iter_mut().for_each(|v| *v = 0.0);
        for t in 0..j {
            let row = (bi * j + t) * e;
            let bs = &b[(bi * j + t) * s..][..s];
            let (prev, next) = hs.split_at_mut((t + 1) * e * s);
            let prev = &prev[t * e * s..];
            let next = &mut next[..e * s];
            for ch in 0..e {
                let d = dt[row + ch];
                let x = u[row + ch];
                for st in 0..s {
                    let i = ch * s + st;
                    next[i] = (d * a[i]).exp() * prev[i] + d * bs[st] * x;
                }
            }
        }
        gh.iter_mut().for_each(|v| *v = 0.0);
        for t in (0..j).rev() {
            let row = (bi * j + t) * e;
            let srow = (bi * j + t) * s;
            let bs = &b[srow..][..s];
            let cs = &c[srow..][..s];
            let h_cur = &hs[(t + 1) * e * s..][..e * s];
            let h_prev = &hs[t * e * s..][..e * s];
            for ch in 0..e {
                let gy = gd[row + ch];
                let d = dt[row + ch];
                let x = u[row + ch];
                galpha.data_mut()[ch] += gy * x;
                let mut gx = gy * alpha[ch];
                let mut gdelta = 0.0;
                for st in 0..s {
                    let i = ch * s + st;
                    gct.data_mut()[srow + st] += gy * h_cur[i];
                    let g_h = gh[i] + gy * cs[st];
                    let decay = (d * a[i]).exp();
                    let g_decay = g_h * h_prev[i] * decay;
                    gdelta += g_decay * a[i] + g_h * bs[st] * x;
                    ga.data_mut()[i] += g_decay * d;
                    gbt.data_mut()[srow + st] += g_h * d * x;
                    gx += g_h * d * bs[st];
                    gh[i] = g_h * decay;
                }
                gu.data_mut()[row + ch] += gx;
                gdt.data_mut()[row + ch] += gdelta;
            }
        }
    }
    [gu, gdt, ga, gbt, gct, galpha]
}

/// Gather rows of `table[V, d]`: output `[ids.len(), d]`.
pub fn embedding(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    if table.rank() != 2 {
        return Err(dim_err("embedding", table.shape(), &[ids.len()]));
    }
    let (v, d) = (table.shape()[0], table.shape()[1]);
    let mut out = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= v {
            return Err(Error::InvalidArgument(format!(
                "category id {id} outside vocabulary of size {v}"
            )));
        }
        out.extend_from_slice(&table.data()[id * d..][..d]);
    }
    Tensor::new(vec![ids.len(), d], out)
}

pub(crate) fn embedding_backward(table_shape: &[usize], ids: &[usize], g: &Tensor) -> Tensor {
    let d = table_shape[1];
    let mut gt = Tensor::zeros(table_shape);
    for (row, &id) in g.data().chunks(d).zip(ids) {
        for (acc, v) in gt.data_mut()[id * d..][..d].iter_mut().zip(row) {
            *acc += v;
        }
    }
    gt
}

/// Reorder axes: output axis `i` is input axis `perm[i]`.
pub fn permute(x: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let rank = x.rank();
    let mut seen = vec![false; rank];
    if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::InvalidArgument(format!(
            "{perm:?} is not a permutation of the axes of {:?}",
            x.shape()
        )));
    }
    let in_strides = strides(x.shape());
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut index = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..x.len() {
        out.push(x.data()[off]);
        for ax in (0..rank).rev() {
            index[ax] += 1;
            off += src_strides[ax];
            if index[ax] < out_shape[ax] {
                break;
            }
            off -= src_strides[ax] * index[ax];
            index[ax] = 0;
        }
    }
    Tensor::new(out_shape, out)
}

pub(crate) fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Pick `indices` along `axis` (repetition allowed).
pub fn index_select(x: &Tensor, axis: usize, indices: &[usize]) -> Result<Tensor> {
    let (outer, len, inner) = split_axis(x.shape(), axis)?;
    if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
        return Err(Error::InvalidArgument(format!(
            "index {bad} out of range for axis {axis} of length {len}"
        )));
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = indices.len();
    let mut out = Vec::with_capacity(outer * indices.len() * inner);
    for o in 0..outer {
        for &i in indices {
            out.extend_from_slice(&x.data()[(o * len + i) * inner..][..inner]);
        }
    }
    Tensor::new(shape, out)
}

pub(crate) fn index_select_backward(
    input_shape: &[usize],
    axis: usize,
    indices: &[usize],
    g: &Tensor,
) -> Tensor {
    let (outer, len, inner) = split_axis(input_shape, axis).expect("validated in forward");
    let mut gx = Tensor::zeros(input_shape);
    let k = indices.len();
    for o in 0..outer {
        for (slot, &i) in indices.iter().enumerate() {
            let src = &g.data()[(o * k + slot) * inner..][..inner];
            let dst = &mut gx.data_mut()[(o * len + i) * inner..][..inner];
            for (acc, v) in dst.iter_mut().zip(src) {
                *acc += v;
            }
        }
    }
    gx
}

/// Concatenate along `axis`; all other axes must agree.
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(Error::Axis { axis, rank });
    }
    for p in parts {
        let ok = p.rank() == rank
            && (0..rank).all(|i| i == axis || p.shape()[i] == first.shape()[i]);
        if !ok {
            return Err(dim_err("concat", first.shape(), p.shape()));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * chunk..][..chunk]);
        }
    }
    Tensor::new(shape, out)
}

pub(crate) fn concat_backward(shapes: &[Vec<usize>], axis: usize, g: &Tensor) -> Vec<Tensor> {
    let outer: usize = shapes[0][..axis].iter().product();
    let inner: usize = shapes[0][axis + 1..].iter().product();
    let total: usize = shapes.iter().map(|s| s[axis]).sum();
    let mut grads: Vec<Tensor> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
    for o in 0..outer {
        let mut start = o * total * inner;
        for (s, gt) in shapes.iter().zip(grads.iter_mut()) {
            let chunk = s[axis] * inner;
            gt.data_mut()[o * chunk..][..chunk].copy_from_slice(&g.data()[start..][..chunk]);
            start += chunk;
        }
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_broadcasts_leading_axes() {
        let a = Tensor::new(vec![2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
        let out = matmul(&a, &b).unwrap();
        assert_eq!(out.shape(), &[2, 1, 1]);
        assert_eq!(out.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn softplus_is_overflow_safe() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn max_reduce_ties_pick_lowest_index() {
        let x = Tensor::from_vec(vec![1.0, 3.0, 3.0]);
        let (_, arg) = reduce(Reduction::Max, &x, 0).unwrap();
        assert_eq!(arg, vec![1]);
    }

    #[test]
    fn reduce_rejects_empty_axis() {
        let x = Tensor::zeros(&[2, 0]);
        assert!(matches!(
            reduce(Reduction::Sum, &x, 1),
            Err(Error::EmptyAxis)
        ));
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::zeros(&[1, 3, 4]);
        let k = Tensor::zeros(&[3, 2]);
        let b = Tensor::zeros(&[3]);
        assert!(causal_conv(&x, &k, &b).is_err());
    }

    #[test]
    fn permute_and_inverse_round_trip() {
        let x = Tensor::new(vec![2, 3, 4], (0..24).map(f64::from).collect()).unwrap();
        let p = [2, 0, 1];
        let y = permute(&x, &p).unwrap();
        assert_eq!(y.shape(), &[4, 2, 3]);
        assert_eq!(y.get(&[3, 1, 2]), x.get(&[1, 2, 3]));
        let back = permute(&y, &inverse_permutation(&p)).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -5.0, 0.0, 700.0]).unwrap();
        for row in softmax(&x).data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
