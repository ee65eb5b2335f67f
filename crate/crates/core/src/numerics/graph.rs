use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, Elementwise, Reduction, ScanInputs};
use super::tensor::{broadcast_zip, sum_to_shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Unary(Var, Elementwise),
    MatMul(Var, Var),
    Linear(Var, Var, Option<Var>),
    Reduce {
        x: Var,
        kind: Reduction,
        axis: usize,
        argmax: Vec<usize>,
    },
    Conv(Var, Var, Var),
    RmsNorm(Var, Var, f64),
    LayerNorm(Var, Var, Var, f64),
    Softmax(Var),
    Scan([Var; 6]),
    Embedding(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Select(Var, usize, Vec<usize>),
    Permute(Var, Vec<usize>),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode computation graph.
///
/// Nodes are appended in evaluation order, so the insertion order is already a
/// topological order and backward is a single reverse sweep.
pub struct Graph {
    nodes: Vec<Node>,
    /// Present only in training mode; drives dropout masks.
    rng: Option<ChaCha8Rng>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            rng: None,
        }
    }

    /// A graph whose dropout layers are active, with masks drawn from `seed`.
    pub fn training(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast_zip(self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast_zip(self.value(a), self.value(b), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product with singleton-axis broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast_zip(self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let v = self.value(x).map(|e| e * factor);
        self.push(v, Op::Scale(x, factor), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, offset: f64) -> Var {
        let v = self.value(x).map(|e| e + offset);
        self.push(v, Op::Shift(x), &[x])
    }

    pub fn unary(&mut self, kind: Elementwise, x: Var) -> Var {
        let v = kernels::elementwise(kind, self.value(x));
        self.push(v, Op::Unary(x, kind), &[x])
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Elementwise::Exp, x)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(Elementwise::Silu, x)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(Elementwise::Softplus, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Elementwise::Sigmoid, x)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(Elementwise::Log, x)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(Elementwise::Square, x)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = kernels::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    /// `x·w + bias` over the last axis of `x`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let v = kernels::linear(self.value(x), self.value(w), bias.map(|b| self.value(b)))?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.push(v, Op::Linear(x, w, bias), &inputs))
    }

    pub fn reduce(&mut self, kind: Reduction, x: Var, axis: usize) -> Result<Var> {
        let (v, argmax) = kernels::reduce(kind, self.value(x), axis)?;
        Ok(self.push(
            v,
            Op::Reduce {
                x,
                kind,
                axis,
                argmax,
            },
            &[x],
        ))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let flat = self.reshape(x, &[n])?;
        self.reduce(Reduction::Sum, flat, 0)
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let flat = self.reshape(x, &[n])?;
        self.reduce(Reduction::Mean, flat, 0)
    }

    pub fn causal_conv(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let v = kernels::causal_conv(self.value(x), self.value(kernel), self.value(bias))?;
        Ok(self.push(v, Op::Conv(x, kernel, bias), &[x, kernel, bias]))
    }

    pub fn rmsnorm(&mut self, x: Var, weight: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::InvalidArgument("rmsnorm eps must be positive".into()));
        }
        let v = kernels::rmsnorm(self.value(x), self.value(weight), eps)?;
        Ok(self.push(v, Op::RmsNorm(x, weight, eps), &[x, weight]))
    }

    pub fn layernorm(&mut self, x: Var, weight: Var, bias: Var, eps: f64) -> Result<Var> {
        let v = kernels::layernorm(self.value(x), self.value(weight), self.value(bias), eps)?;
        Ok(self.push(v, Op::LayerNorm(x, weight, bias, eps), &[x, weight, bias]))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let v = kernels::softmax(self.value(x));
        self.push(v, Op::Softmax(x), &[x])
    }

    /// Selective scan; see [`kernels::selective_scan`] for shapes.
    pub fn selective_scan(
        &mut self,
        u: Var,
        delta: Var,
        a: Var,
        b: Var,
        c: Var,
        alpha: Var,
    ) -> Result<Var> {
        let v = kernels::selective_scan(&ScanInputs {
            u: self.value(u),
            delta: self.value(delta),
            a: self.value(a),
            b: self.value(b),
            c: self.value(c),
            alpha: self.value(alpha),
        })?;
        let inputs = [u, delta, a, b, c, alpha];
        Ok(self.push(v, Op::Scan(inputs), &inputs))
    }

    pub fn embedding(&mut self, table: Var, ids: Vec<usize>) -> Result<Var> {
        let v = kernels::embedding(self.value(table), &ids)?;
        Ok(self.push(v, Op::Embedding(table, ids), &[table]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = kernels::concat(&tensors, axis)?;
        Ok(self.push(v, Op::Concat(parts.to_vec(), axis), parts))
    }

    pub fn index_select(&mut self, x: Var, axis: usize, indices: Vec<usize>) -> Result<Var> {
        let v = kernels::index_select(self.value(x), axis, &indices)?;
        Ok(self.push(v, Op::Select(x, axis, indices), &[x]))
    }

    /// Reverse the order along `axis`.
    pub fn flip(&mut self, x: Var, axis: usize) -> Result<Var> {
        let len = *self
            .shape(x)
            .get(axis)
            .ok_or(Error::Axis {
                axis,
                rank: self.shape(x).len(),
            })?;
        self.index_select(x, axis, (0..len).rev().collect())
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let v = kernels::permute(self.value(x), perm)?;
        Ok(self.push(v, Op::Permute(x, perm.to_vec()), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x), &[x]))
    }

    /// Inverted dropout with drop probability `p`; the identity outside training.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout rate {p} outside [0, 1)")));
        }
        let Some(rng) = self.rng.as_mut().filter(|_| p > 0.0) else {
            return Ok(x);
        };
        let keep = 1.0 / (1.0 - p);
        let shape = self.nodes[x.0].value.shape().to_vec();
        let mask: Vec<f64> = (0..self.nodes[x.0].value.len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let mask = self.constant(Tensor::new(shape, mask)?);
        self.mul(x, mask)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(shape, 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut send = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(t.data()) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, sum_to_shape(g, self.shape(*a)));
                send(*b, sum_to_shape(g, self.shape(*b)));
            }
            Op::Sub(a, b) => {
                send(*a, sum_to_shape(g, self.shape(*a)));
                send(*b, sum_to_shape(&g.map(|v| -v), self.shape(*b)));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].requires_grad {
                    let ga = broadcast_zip(g, vb, |x, y| x * y).expect("shapes checked");
                    send(*a, sum_to_shape(&ga, va.shape()));
                }
                if self.nodes[b.0].requires_grad {
                    let gb = broadcast_zip(g, va, |x, y| x * y).expect("shapes checked");
                    send(*b, sum_to_shape(&gb, vb.shape()));
                }
            }
            Op::Scale(x, f) => send(*x, g.map(|v| v * f)),
            Op::Shift(x) => send(*x, g.clone()),
            Op::Unary(x, kind) => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .zip(g.data())
                    .map(|((&xi, &yi), &gi)| gi * kind.derivative(xi, yi))
                    .collect();
                send(*x, Tensor::new(xv.shape().to_vec(), data).expect("same shape"));
            }
            Op::MatMul(a, b) => {
                let (ga, gb) = kernels::matmul_backward(self.value(*a), self.value(*b), g);
                send(*a, ga);
                send(*b, gb);
            }
            Op::Linear(x, w, b) => {
                let (gx, gw, gb) =
                    kernels::linear_backward(self.value(*x), self.value(*w), g, b.is_some());
                send(*x, gx);
                send(*w, gw);
                if let (Some(b), Some(gb)) = (b, gb) {
                    send(*b, gb);
                }
            }
            Op::Reduce {
                x,
                kind,
                axis,
                argmax,
            } => send(
                *x,
                kernels::reduce_backward(*kind, self.shape(*x), *axis, argmax, g),
            ),
            Op::Conv(x, k, b) => {
                let (gx, gk, gb) = kernels::causal_conv_backward(self.value(*x), self.value(*k), g);
                send(*x, gx);
                send(*k, gk);
                send(*b, gb);
            }
            Op::RmsNorm(x, w, eps) => {
                let (gx, gw) = kernels::rmsnorm_backward(self.value(*x), self.value(*w), *eps, g);
                send(*x, gx);
                send(*w, gw);
            }
            Op::LayerNorm(x, w, b, eps) => {
                let (gx, gw, gb) =
                    kernels::layernorm_backward(self.value(*x), self.value(*w), *eps, g);
                send(*x, gx);
                send(*w, gw);
                send(*b, gb);
            }
            Op::Softmax(x) => send(*x, kernels::softmax_backward(&node.value, g)),
            Op::Scan(inputs) => {
                let [u, delta, a, b, c, alpha] = *inputs;
                let grads = kernels::selective_scan_backward(
                    &ScanInputs {
                        u: self.value(u),
                        delta: self.value(delta),
                        a: self.value(a),
                        b: self.value(b),
                        c: self.value(c),
                        alpha: self.value(alpha),
                    },
                    g,
                );
                for (v, t) in inputs.iter().zip(grads) {
                    send(*v, t);
                }
            }
            Op::Embedding(table, ids) => {
                send(*table, kernels::embedding_backward(self.shape(*table), ids, g))
            }
            Op::Concat(parts, axis) => {
                let shapes: Vec<Vec<usize>> =
                    parts.iter().map(|p| self.shape(*p).to_vec()).collect();
                for (p, t) in parts.iter().zip(kernels::concat_backward(&shapes, *axis, g)) {
                    send(*p, t);
                }
            }
            Op::Select(x, axis, indices) => send(
                *x,
                kernels::index_select_backward(self.shape(*x), *axis, indices, g),
            ),
            Op::Permute(x, perm) => send(
                *x,
                kernels::permute(g, &kernels::inverse_permutation(perm)).expect("valid perm"),
            ),
            Op::Reshape(x) => send(
                *x,
                g.clone().reshape(self.shape(*x)).expect("same element count"),
            ),
        }
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` was reachable.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0, -3.0, 2.0]));
        let loss = g.sum_all(x).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient_is_analytic() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0, -2.0]));
        let sq = g.square(x);
        let loss = g.sum_all(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::from_vec(vec![1.0, 2.0]));
        let x = g.param(Tensor::from_vec(vec![3.0, 4.0]));
        let p = g.mul(c, x).unwrap();
        let loss = g.sum_all(p).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn shared_input_accumulates() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 6.0);
    }
}
