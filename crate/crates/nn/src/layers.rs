//! Parameterized building blocks.

use rand::Rng;

use crate::graph::{BufferUpdate, Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// 2-D convolution, kernel `[Cout, Cin, k, k]`, initialized `U(±1/√fan_in)`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        let bound = 1.0 / ((cin * kernel * kernel) as f64).sqrt();
        let weight = store.uniform(format!("{name}.weight"), [cout, cin, kernel, kernel], bound);
        let bias = bias.then(|| store.uniform(format!("{name}.bias"), [1, cout, 1, 1], bound));
        Self {
            weight,
            bias,
            stride,
            pad,
        }
    }

    /// Stride-1 convolution that preserves spatial size (odd kernel).
    pub fn same(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
    ) -> Self {
        assert!(kernel % 2 == 1, "same-padding needs an odd kernel");
        Self::new(store, name, cin, cout, kernel, 1, kernel / 2, true)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv2d(x, w, b, self.stride, self.pad)
    }
}

/// Transposed convolution, kernel `[Cin, Cout, k, k]`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        let bound = 1.0 / ((cout * kernel * kernel) as f64).sqrt();
        let weight = store.uniform(format!("{name}.weight"), [cin, cout, kernel, kernel], bound);
        let bias = bias.then(|| store.uniform(format!("{name}.bias"), [1, cout, 1, 1], bound));
        Self {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv_transpose2d(x, w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let shape = [1, channels, 1, 1];
        Self {
            gamma: store.constant(format!("{name}.gamma"), shape, 1.0),
            beta: store.constant(format!("{name}.beta"), shape, 0.0),
            running_mean: store.buffer(format!("{name}.running_mean"), shape, 0.0),
            running_var: store.buffer(format!("{name}.running_var"), shape, 1.0),
            eps: 1e-5,
        }
    }

    /// Batch statistics in training mode (queued for the running averages),
    /// running statistics otherwise.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, train: bool) -> Var {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        if train {
            let count = {
                let t = g.value(x);
                t.n() * t.plane_len()
            };
            let (y, batch_mean, batch_var) = g.batch_norm(x, gamma, beta, self.eps);
            g.record_buffer_update(BufferUpdate {
                running_mean: self.running_mean,
                running_var: self.running_var,
                batch_mean,
                batch_var,
                count,
            });
            y
        } else {
            let rm = store.get(self.running_mean).data();
            let rv = store.get(self.running_var).data();
            let inv: Vec<f64> = rv.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
            let c = inv.len();
            let norm_scale = g.input(Tensor::from_vec([1, c, 1, 1], inv.clone()));
            let norm_shift = g.input(Tensor::from_vec(
                [1, c, 1, 1],
                rm.iter().zip(&inv).map(|(m, s)| -m * s).collect(),
            ));
            let normed = g.channel_affine(x, norm_scale, norm_shift);
            g.channel_affine(normed, gamma, beta)
        }
    }
}

/// Inverted dropout: zeroes each element with probability `rate` and rescales
/// survivors by `1 / (1 - rate)`.
pub fn dropout(g: &mut Graph, x: Var, rate: f64, rng: &mut impl Rng) -> Var {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
    let keep = 1.0 / (1.0 - rate);
    let mask = Tensor::from_fn(g.value(x).shape(), |_| {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    });
    g.mul_const(x, mask)
}
