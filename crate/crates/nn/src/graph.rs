//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation applied during a forward pass. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and returns
//! the gradients of every node that depends on a parameter or on an input
//! marked with [`Graph::input_with_grad`].

use std::collections::{HashMap, HashSet};

use crate::kernels;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    ConcatChannels(Vec<Var>),
    SliceChannels(Var, usize),
    ConcatBatch(Vec<Var>),
    SliceBatch(Var, usize),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        x_hat: Tensor,
        inv_std: Vec<f64>,
    },
    ChannelAffine {
        x: Var,
        scale: Var,
        shift: Var,
    },
    MaxPool2(Var, Vec<usize>),
    Upsample2(Var),
    Mean(Var),
    WeightedSum(Vec<(Var, f64)>),
    Huber {
        pred: Var,
        target: Tensor,
        delta: f64,
    },
    L1 {
        pred: Var,
        target: Tensor,
    },
    BceLogits {
        logits: Var,
        label: f64,
    },
    SoftmaxCe {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Batch statistics produced by a training-mode batch norm, to be folded into
/// the running averages once the step completes.
#[derive(Clone, Debug)]
pub struct BufferUpdate {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    /// Elements per channel the statistics were computed over.
    pub count: usize,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    buffer_updates: Vec<BufferUpdate>,
    frozen: HashSet<u64>,
}

/// Gradients returned by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradients of every parameter that took part in the forward pass.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .filter_map(|&(id, v)| self.grads[v.0].as_ref().map(|g| (id, g)))
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(v))` without overflow.
fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

fn broadcast_batch(a: &Tensor, b: &Tensor, what: &str) {
    assert!(
        a.shape() == b.shape() || (b.n() == 1 && a.shape()[1..] == b.shape()[1..]),
        "{what}: shapes {:?} and {:?} are not broadcast-compatible",
        a.shape(),
        b.shape()
    );
}

/// Sums a gradient over the batch axis when the operand was broadcast.
fn reduce_to(grad: Tensor, shape: [usize; 4]) -> Tensor {
    if grad.shape() == shape {
        return grad;
    }
    let mut out = Tensor::zeros(shape);
    for n in 0..grad.n() {
        for (o, g) in out.data_mut().iter_mut().zip(grad.sample(n)) {
            *o += g;
        }
    }
    out
}

fn binary_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let s = b.len();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| f(x, b.data()[i % s]))
        .collect();
    Tensor::from_vec(a.shape(), data)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "node is not a scalar");
        t.data()[0]
    }

    /// A constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// An input whose gradient is reported by [`Graph::backward`].
    pub fn input_with_grad(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf for a trainable parameter. Repeated calls return the same node, so
    /// weights shared across time steps accumulate a single gradient.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let trainable = store.is_trainable(id) && !self.frozen.contains(&store.id());
        let v = self.push(store.get(id).clone(), Op::Leaf, trainable);
        self.params.insert(id, v);
        v
    }

    /// Parameters of `store` enter this graph as constants from now on.
    pub fn freeze(&mut self, store: &ParamStore) {
        self.frozen.insert(store.id());
    }

    pub fn take_buffer_updates(&mut self) -> Vec<BufferUpdate> {
        std::mem::take(&mut self.buffer_updates)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let value = kernels::conv2d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        );
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            ng,
        )
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Var {
        let value = kernels::conv_transpose2d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        );
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        self.push(
            value,
            Op::ConvTranspose2d {
                x,
                w,
                b,
                stride,
                pad,
            },
            ng,
        )
    }

    /// `a + b`, where `b` may have batch size 1 and is then broadcast.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        broadcast_batch(self.value(a), self.value(b), "add");
        let value = binary_broadcast(self.value(a), self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        broadcast_batch(self.value(a), self.value(b), "sub");
        let value = binary_broadcast(self.value(a), self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    /// Hadamard product, `b` broadcast over the batch when it has batch size 1.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        broadcast_batch(self.value(a), self.value(b), "mul");
        let value = binary_broadcast(self.value(a), self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    /// Multiplication by a constant tensor of the same shape (e.g. a dropout mask).
    pub fn mul_const(&mut self, a: Var, k: Tensor) -> Var {
        let value = self.value(a).zip_map(&k, |x, y| x * y);
        let ng = self.ng(a);
        self.push(value, Op::MulConst(a, k), ng)
    }

    /// `scale · x + offset`.
    pub fn affine(&mut self, x: Var, scale: f64, offset: f64) -> Var {
        let value = self.value(x).map(|v| scale * v + offset);
        let ng = self.ng(x);
        self.push(value, Op::Affine(x, scale), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let ng = self.ng(x);
        self.push(value, Op::Sigmoid(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        let ng = self.ng(x);
        self.push(value, Op::Tanh(x), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let ng = self.ng(x);
        self.push(value, Op::Relu(x), ng)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let ng = self.ng(x);
        self.push(value, Op::LeakyRelu(x, slope), ng)
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_channels(&tensors);
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatChannels(parts.to_vec()), ng)
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.value(x).slice_channels(start, len);
        let ng = self.ng(x);
        self.push(value, Op::SliceChannels(x, start), ng)
    }

    pub fn concat_batch(&mut self, parts: &[Var]) -> Var {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_batch(&tensors);
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatBatch(parts.to_vec()), ng)
    }

    pub fn slice_batch(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.value(x).slice_batch(start, len);
        let ng = self.ng(x);
        self.push(value, Op::SliceBatch(x, start), ng)
    }

    /// Training-mode batch normalization over `(N, H, W)` per channel.
    /// `gamma` and `beta` are `[1, C, 1, 1]`. The biased batch statistics are
    /// returned alongside the output.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> (Var, Vec<f64>, Vec<f64>) {
        let xt = self.value(x);
        let (c, plane) = (xt.c(), xt.plane_len());
        let count = (xt.n() * plane) as f64;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for n in 0..xt.n() {
            let s = xt.sample(n);
            for ch in 0..c {
                mean[ch] += s[ch * plane..(ch + 1) * plane].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        for n in 0..xt.n() {
            let s = xt.sample(n);
            for ch in 0..c {
                var[ch] += s[ch * plane..(ch + 1) * plane]
                    .iter()
                    .map(|v| (v - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let x_hat = Tensor::from_fn(xt.shape(), |[n, ch, y, xx]| {
            (xt.get([n, ch, y, xx]) - mean[ch]) * inv_std[ch]
        });
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let value = Tensor::from_fn(xt.shape(), |[n, ch, y, xx]| {
            g[ch] * x_hat.get([n, ch, y, xx]) + b[ch]
        });
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        let v = self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
            },
            ng,
        );
        (v, mean, var)
    }

    pub(crate) fn record_buffer_update(&mut self, update: BufferUpdate) {
        self.buffer_updates.push(update);
    }

    /// Per-channel `x · scale + shift` with `[1, C, 1, 1]` operands.
    pub fn channel_affine(&mut self, x: Var, scale: Var, shift: Var) -> Var {
        let xt = self.value(x);
        let (s, b) = (self.value(scale).data(), self.value(shift).data());
        assert_eq!(s.len(), xt.c(), "channel_affine scale length");
        assert_eq!(b.len(), xt.c(), "channel_affine shift length");
        let value = Tensor::from_fn(xt.shape(), |[n, c, y, xx]| {
            xt.get([n, c, y, xx]) * s[c] + b[c]
        });
        let ng = self.ng(x) || self.ng(scale) || self.ng(shift);
        self.push(value, Op::ChannelAffine { x, scale, shift }, ng)
    }

    pub fn max_pool2(&mut self, x: Var) -> Var {
        let (value, arg) = kernels::max_pool2(self.value(x));
        let ng = self.ng(x);
        self.push(value, Op::MaxPool2(x, arg), ng)
    }

    pub fn upsample_bilinear2(&mut self, x: Var) -> Var {
        let value = kernels::upsample_bilinear2(self.value(x));
        let ng = self.ng(x);
        self.push(value, Op::Upsample2(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).mean());
        let ng = self.ng(x);
        self.push(value, Op::Mean(x), ng)
    }

    /// `Σ wᵢ · xᵢ` over same-shaped nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        assert!(!terms.is_empty(), "weighted_sum of nothing");
        let mut value = Tensor::zeros(self.value(terms[0].0).shape());
        for &(v, w) in terms {
            let t = self.value(v);
            assert_eq!(t.shape(), value.shape(), "weighted_sum shape mismatch");
            for (o, x) in value.data_mut().iter_mut().zip(t.data()) {
                *o += w * x;
            }
        }
        let ng = terms.iter().any(|&(v, _)| self.ng(v));
        self.push(value, Op::WeightedSum(terms.to_vec()), ng)
    }

    /// Mean Huber penalty over all elements.
    pub fn huber(&mut self, pred: Var, target: &Tensor, delta: f64) -> Var {
        let p = self.value(pred);
        assert_eq!(p.shape(), target.shape(), "huber shape mismatch");
        let total: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| huber_elem(a - b, delta))
            .sum();
        let value = Tensor::scalar(total / p.len() as f64);
        let ng = self.ng(pred);
        self.push(
            value,
            Op::Huber {
                pred,
                target: target.clone(),
                delta,
            },
            ng,
        )
    }

    /// Mean absolute error over all elements.
    pub fn l1(&mut self, pred: Var, target: &Tensor) -> Var {
        let p = self.value(pred);
        assert_eq!(p.shape(), target.shape(), "l1 shape mismatch");
        let total: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        let value = Tensor::scalar(total / p.len() as f64);
        let ng = self.ng(pred);
        self.push(
            value,
            Op::L1 {
                pred,
                target: target.clone(),
            },
            ng,
        )
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against a constant label.
    pub fn bce_with_logits(&mut self, logits: Var, label: f64) -> Var {
        let z = self.value(logits);
        let total: f64 = z
            .data()
            .iter()
            .map(|&v| label * softplus(-v) + (1.0 - label) * softplus(v))
            .sum();
        let value = Tensor::scalar(total / z.len() as f64);
        let ng = self.ng(logits);
        self.push(value, Op::BceLogits { logits, label }, ng)
    }

    /// Mean categorical cross-entropy of the channel-axis softmax of `logits`
    /// against one class index per pixel (`targets` in `[N, H, W]` order).
    /// Log probabilities are clipped at `eps`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize], eps: f64) -> Var {
        let z = self.value(logits);
        let (n, c, plane) = (z.n(), z.c(), z.plane_len());
        assert_eq!(targets.len(), n * plane, "one target per pixel required");
        let probs = softmax_channels(z);
        let mut total = 0.0;
        for i in 0..n {
            let s = probs.sample(i);
            for j in 0..plane {
                let t = targets[i * plane + j];
                assert!(t < c, "target class {t} out of range for {c} classes");
                total -= s[t * plane + j].max(eps).ln();
            }
        }
        let value = Tensor::scalar(total / (n * plane) as f64);
        let ng = self.ng(logits);
        self.push(
            value,
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        )
    }

    /// Back-propagates from the scalar node `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward root must be a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut params: Vec<(ParamId, Var)> = self.params.iter().map(|(&k, &v)| (k, v)).collect();
        params.sort_by_key(|&(id, _)| id);
        Gradients { grads, params }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => e.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let r = kernels::conv2d_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    *stride,
                    *pad,
                    self.ng(*x),
                );
                if let Some(dx) = r.dx {
                    acc(*x, dx);
                }
                acc(*w, r.dw);
                if let Some(b) = b {
                    acc(*b, r.db);
                }
            }
            Op::ConvTranspose2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let r = kernels::conv_transpose2d_backward(
                    self.value(*x),
                    self.value(*w),
                    g,
                    *stride,
                    *pad,
                    self.ng(*x),
                );
                if let Some(dx) = r.dx {
                    acc(*x, dx);
                }
                acc(*w, r.dw);
                if let Some(b) = b {
                    acc(*b, r.db);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, reduce_to(g.clone(), self.value(*b).shape()));
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, reduce_to(g.map(|v| -v), self.value(*b).shape()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    acc(*a, binary_broadcast(g, bv, |x, y| x * y));
                }
                if self.ng(*b) {
                    acc(*b, reduce_to(g.zip_map(av, |x, y| x * y), bv.shape()));
                }
            }
            Op::MulConst(a, k) => acc(*a, g.zip_map(k, |x, y| x * y)),
            Op::Affine(x, s) => acc(*x, g.map(|v| v * s)),
            Op::Sigmoid(x) => acc(*x, g.zip_map(&node.value, |d, y| d * y * (1.0 - y))),
            Op::Tanh(x) => acc(*x, g.zip_map(&node.value, |d, y| d * (1.0 - y * y))),
            Op::Relu(x) => acc(
                *x,
                g.zip_map(self.value(*x), |d, v| if v > 0.0 { d } else { 0.0 }),
            ),
            Op::LeakyRelu(x, s) => acc(
                *x,
                g.zip_map(self.value(*x), |d, v| if v > 0.0 { d } else { s * d }),
            ),
            Op::ConcatChannels(parts) => {
                let mut off = 0;
                for &p in parts {
                    let c = self.value(p).c();
                    if self.ng(p) {
                        acc(p, g.slice_channels(off, c));
                    }
                    off += c;
                }
            }
            Op::SliceChannels(x, start) => {
                let xv = self.value(*x);
                let mut dx = Tensor::zeros(xv.shape());
                let plane = xv.plane_len();
                for n in 0..xv.n() {
                    let off = start * plane;
                    dx.sample_mut(n)[off..off + g.sample_len()].copy_from_slice(g.sample(n));
                }
                acc(*x, dx);
            }
            Op::ConcatBatch(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).n();
                    if self.ng(p) {
                        acc(p, g.slice_batch(off, n));
                    }
                    off += n;
                }
            }
            Op::SliceBatch(x, start) => {
                let xv = self.value(*x);
                let mut dx = Tensor::zeros(xv.shape());
                let s = xv.sample_len();
                dx.data_mut()[start * s..start * s + g.len()].copy_from_slice(g.data());
                acc(*x, dx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                x_hat,
                inv_std,
            } => {
                let c = x_hat.c();
                let plane = x_hat.plane_len();
                let count = (x_hat.n() * plane) as f64;
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for n in 0..x_hat.n() {
                    let (gs, xs) = (g.sample(n), x_hat.sample(n));
                    for ch in 0..c {
                        for j in ch * plane..(ch + 1) * plane {
                            dgamma[ch] += gs[j] * xs[j];
                            dbeta[ch] += gs[j];
                        }
                    }
                }
                if self.ng(*x) {
                    let gam = self.value(*gamma).data();
                    let dx = Tensor::from_fn(x_hat.shape(), |i| {
                        let ch = i[1];
                        gam[ch] * inv_std[ch] / count
                            * (count * g.get(i) - dbeta[ch] - x_hat.get(i) * dgamma[ch])
                    });
                    acc(*x, dx);
                }
                acc(*gamma, Tensor::from_vec([1, c, 1, 1], dgamma));
                acc(*beta, Tensor::from_vec([1, c, 1, 1], dbeta));
            }
            Op::ChannelAffine { x, scale, shift } => {
                let xv = self.value(*x);
                let s = self.value(*scale).data();
                let plane = xv.plane_len();
                let mut ds = vec![0.0; xv.c()];
                let mut db = vec![0.0; xv.c()];
                for n in 0..xv.n() {
                    let (gs, xs) = (g.sample(n), xv.sample(n));
                    for ch in 0..xv.c() {
                        for j in ch * plane..(ch + 1) * plane {
                            ds[ch] += gs[j] * xs[j];
                            db[ch] += gs[j];
                        }
                    }
                }
                if self.ng(*x) {
                    acc(*x, Tensor::from_fn(xv.shape(), |i| g.get(i) * s[i[1]]));
                }
                acc(*scale, Tensor::from_vec([1, xv.c(), 1, 1], ds));
                acc(*shift, Tensor::from_vec([1, xv.c(), 1, 1], db));
            }
            Op::MaxPool2(x, arg) => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                for (gv, &i) in g.data().iter().zip(arg) {
                    dx.data_mut()[i] += gv;
                }
                acc(*x, dx);
            }
            Op::Upsample2(x) => {
                acc(
                    *x,
                    kernels::upsample_bilinear2_backward(g, self.value(*x).shape()),
                );
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let k = g.data()[0] / xv.len() as f64;
                acc(*x, Tensor::full(xv.shape(), k));
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    acc(v, g.map(|d| d * w));
                }
            }
            Op::Huber {
                pred,
                target,
                delta,
            } => {
                let p = self.value(*pred);
                let k = g.data()[0] / p.len() as f64;
                acc(
                    *pred,
                    p.zip_map(target, |a, b| k * huber_grad_elem(a - b, *delta)),
                );
            }
            Op::L1 { pred, target } => {
                let p = self.value(*pred);
                let k = g.data()[0] / p.len() as f64;
                acc(*pred, p.zip_map(target, |a, b| k * sign(a - b)));
            }
            Op::BceLogits { logits, label } => {
                let z = self.value(*logits);
                let k = g.data()[0] / z.len() as f64;
                acc(*logits, z.map(|v| k * (sigmoid(v) - label)));
            }
            Op::SoftmaxCe {
                logits,
                targets,
                probs,
            } => {
                let plane = probs.plane_len();
                let k = g.data()[0] / (probs.n() * plane) as f64;
                let mut d = probs.map(|p| p * k);
                for n in 0..probs.n() {
                    let s = d.sample_mut(n);
                    for j in 0..plane {
                        s[targets[n * plane + j] * plane + j] -= k;
                    }
                }
                acc(*logits, d);
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Huber penalty of a single residual: quadratic inside `|e| ≤ δ`, linear outside.
pub fn huber_elem(e: f64, delta: f64) -> f64 {
    if e.abs() <= delta {
        0.5 * e * e
    } else {
        delta * e.abs() - 0.5 * delta * delta
    }
}

/// Derivative of [`huber_elem`] with respect to the residual.
pub fn huber_grad_elem(e: f64, delta: f64) -> f64 {
    if e.abs() <= delta {
        e
    } else {
        delta * sign(e)
    }
}

/// Softmax along the channel axis, independently for every pixel.
pub fn softmax_channels(z: &Tensor) -> Tensor {
    let (c, plane) = (z.c(), z.plane_len());
    let mut out = Tensor::zeros(z.shape());
    for n in 0..z.n() {
        let s = z.sample(n);
        let o = out.sample_mut(n);
        for j in 0..plane {
            let m = (0..c)
                .map(|k| s[k * plane + j])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..c {
                let e = (s[k * plane + j] - m).exp();
                o[k * plane + j] = e;
                total += e;
            }
            for k in 0..c {
                o[k * plane + j] /= total;
            }
        }
    }
    out
}

pub fn sigmoid_tensor(z: &Tensor) -> Tensor {
    z.map(sigmoid)
}
