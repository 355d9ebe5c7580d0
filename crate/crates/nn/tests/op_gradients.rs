//! Every differentiable op checked against central finite differences.

use plfm_nn::gradcheck::{numeric_gradient, relative_error};
use plfm_nn::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-6;

fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Builds `f` over fresh graph inputs, projects the output onto a fixed random
/// tensor, and compares the analytic gradient of every input with finite
/// differences of the same scalar.
fn check(inputs: &[Tensor], seed: u64, f: impl Fn(&mut Graph, &[Var]) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scalar = |xs: &[Tensor], proj: Option<&Tensor>| -> (f64, Graph, Vec<Var>, Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.input_with_grad(x.clone())).collect();
        let out = f(&mut g, &vars);
        let loss = if g.value(out).len() == 1 {
            out
        } else {
            let p = proj.expect("projection").clone();
            let m = g.mul_const(out, p);
            g.mean(m)
        };
        (g.scalar(loss), g, vars, loss)
    };
    let proj = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|x| g.input(x.clone())).collect();
        let out = f(&mut g, &vars);
        random(g.value(out).shape(), &mut rng)
    };
    let (_, g, vars, loss) = scalar(inputs, Some(&proj));
    let grads = g.backward(loss);
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let numeric = numeric_gradient(&inputs[k], EPS, |probe| {
            let mut xs = inputs.to_vec();
            xs[k] = probe.clone();
            scalar(&xs, Some(&proj)).0
        });
        let err = relative_error(&analytic, &numeric);
        assert!(err < TOL, "input {k}: relative error {err:e}");
    }
}

#[test]
fn conv2d_strided_padded() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &(k, s, p) in &[(3, 1, 1), (4, 2, 1), (1, 1, 0)] {
        let x = random([2, 3, 6, 6], &mut rng);
        let w = random([4, 3, k, k], &mut rng);
        let b = random([1, 4, 1, 1], &mut rng);
        check(&[x, w, b], 10, |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), s, p)
        });
    }
}

#[test]
fn conv_transpose2d() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random([2, 3, 3, 3], &mut rng);
    let w = random([3, 2, 4, 4], &mut rng);
    let b = random([1, 2, 1, 1], &mut rng);
    check(&[x, w, b], 11, |g, v| {
        g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1)
    });
}

#[test]
fn elementwise_and_broadcast() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random([3, 2, 3, 3], &mut rng);
    let b = random([1, 2, 3, 3], &mut rng);
    check(&[a.clone(), b.clone()], 12, |g, v| g.mul(v[0], v[1]));
    check(&[a.clone(), b.clone()], 13, |g, v| g.add(v[0], v[1]));
    check(&[a.clone(), b], 14, |g, v| g.sub(v[0], v[1]));
    check(&[a.clone()], 15, |g, v| g.sigmoid(v[0]));
    check(&[a.clone()], 16, |g, v| g.tanh(v[0]));
    check(&[a.clone()], 17, |g, v| g.affine(v[0], -2.5, 0.3));
    check(&[a], 18, |g, v| g.leaky_relu(v[0], 0.2));
}

#[test]
fn reshaping_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random([2, 2, 4, 4], &mut rng);
    let b = random([2, 3, 4, 4], &mut rng);
    check(&[a.clone(), b.clone()], 20, |g, v| {
        let c = g.concat_channels(&[v[0], v[1]]);
        g.slice_channels(c, 1, 3)
    });
    let c = random([1, 2, 4, 4], &mut rng);
    check(&[a.clone(), c], 21, |g, v| {
        let c = g.concat_batch(&[v[0], v[1]]);
        g.slice_batch(c, 1, 2)
    });
    check(&[a.clone()], 22, |g, v| g.upsample_bilinear2(v[0]));
    check(&[a], 23, |g, v| g.max_pool2(v[0]));
}

#[test]
fn normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random([3, 2, 3, 3], &mut rng);
    let gamma = random([1, 2, 1, 1], &mut rng);
    let beta = random([1, 2, 1, 1], &mut rng);
    check(&[x.clone(), gamma.clone(), beta.clone()], 30, |g, v| {
        g.batch_norm(v[0], v[1], v[2], 1e-5).0
    });
    check(&[x, gamma, beta], 31, |g, v| {
        g.channel_affine(v[0], v[1], v[2])
    });
}

#[test]
fn losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pred = random([2, 3, 3, 3], &mut rng);
    let target = random([2, 3, 3, 3], &mut rng);
    check(&[pred.clone()], 40, |g, v| g.huber(v[0], &target, 0.4));
    check(&[pred.clone()], 41, |g, v| g.l1(v[0], &target));
    check(&[pred.clone()], 42, |g, v| g.bce_with_logits(v[0], 1.0));
    check(&[pred.clone()], 43, |g, v| g.bce_with_logits(v[0], 0.0));
    let targets: Vec<usize> = (0..2 * 9).map(|i| i % 3).collect();
    check(&[pred.clone()], 44, |g, v| {
        g.softmax_cross_entropy(v[0], &targets, 1e-12)
    });
    check(&[pred.clone(), target.clone()], 45, |g, v| {
        let a = g.mean(v[0]);
        let b = g.mean(v[1]);
        g.weighted_sum(&[(a, 0.3), (b, -1.7)])
    });
}
