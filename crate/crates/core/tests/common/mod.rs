//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use scvae::fisher::tap_statistics;
use scvae::model::{build_network, forward, AffineTap};
use scvae::{Activation, Graph, Likelihood, NetworkConfig, ParamStore, Side, SkipMode, Tensor, Wiring};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random()).collect()).unwrap()
}

pub fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
}

/// Random architecture with at most three hidden layers per side and at
/// most 200 parameters.
pub fn small_config(rng: &mut ChaCha8Rng, activation: Activation, skip: bool) -> NetworkConfig {
    loop {
        let depth_lo = if skip { 2 } else { 1 };
        let encoder_depth = rng.random_range(depth_lo..=3);
        let decoder_depth = rng.random_range(depth_lo..=3);
        let mode = |d: usize, r: &mut ChaCha8Rng| {
            if !skip {
                SkipMode::None
            } else if d == 3 && r.random_bool(0.5) {
                SkipMode::Long { from: 1, to: 3 }
            } else {
                SkipMode::EveryLayer
            }
        };
        let cfg = NetworkConfig {
            input_dim: rng.random_range(2..=4),
            encoder_depth,
            decoder_depth,
            hidden_width: rng.random_range(2..=4),
            latent_dim: rng.random_range(1..=3),
            encoder_skip: mode(encoder_depth, rng),
            decoder_skip: mode(decoder_depth, rng),
            activation,
            likelihood: if rng.random_bool(0.5) {
                Likelihood::Bernoulli
            } else {
                Likelihood::DiagonalGaussian
            },
        };
        let (p, _) = build_network(&cfg, 0).unwrap();
        if p.param_count() <= 200 {
            return cfg;
        }
    }
}

/// Adds `U(-0.1, 0.1)` noise to every parameter so no pre-activation sits
/// exactly on a ReLU kink (zero-initialized biases otherwise put dead units
/// at precisely 0).
pub fn jitter(params: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
}

/// Batch-mean negative ELBO at fixed noise, straight from the forward pass.
pub fn loss(params: &ParamStore, wiring: &Wiring, x: &Tensor, eps: &Tensor) -> f64 {
    let pass = forward(params, wiring, x, eps).unwrap();
    let l = pass.per_sample_loss();
    l.iter().sum::<f64>() / l.len() as f64
}

/// Largest relative error between backpropagated and central-difference
/// gradients over every parameter; differences below `abs_floor` count as 0.
pub fn finite_difference_error(params: &ParamStore, wiring: &Wiring, x: &Tensor, eps: &Tensor) -> f64 {
    let mut analytic = params.clone();
    let mut pass = forward(&analytic, wiring, x, eps).unwrap();
    pass.backward_mean(&mut analytic).unwrap();
    let grads: Vec<Vec<f64>> = analytic.tensors().map(|t| t.grad().unwrap().to_vec()).collect();

    let h = 1e-5;
    let abs_floor = 1e-8;
    let mut worst: f64 = 0.0;
    for (ti, tensor_grads) in grads.iter().enumerate() {
        for (k, &a) in tensor_grads.iter().enumerate() {
            let mut plus = params.clone();
            plus.tensors_mut().nth(ti).unwrap().data_mut()[k] += h;
            let mut minus = params.clone();
            minus.tensors_mut().nth(ti).unwrap().data_mut()[k] -= h;
            let numeric = (loss(&plus, wiring, x, eps) - loss(&minus, wiring, x, eps)) / (2.0 * h);
            let diff = (a - numeric).abs();
            if diff < abs_floor {
                continue;
            }
            worst = worst.max(diff / a.abs().max(numeric.abs()));
        }
    }
    worst
}

/// Monte Carlo `E_q[log q(z) − log p(z)]` for a diagonal Gaussian `q`.
pub fn monte_carlo_kl(mu: &[f64], log_var: &[f64], samples: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut total = 0.0;
    for _ in 0..samples {
        let mut term = 0.0;
        for (m, lv) in mu.iter().zip(log_var) {
            let e: f64 = StandardNormal.sample(&mut r);
            let z = m + (0.5 * lv).exp() * e;
            // log q − log p; the 2π terms cancel.
            term += -0.5 * (e * e + lv) + 0.5 * z * z;
        }
        total += term;
    }
    total / samples as f64
}

/// Empirical Fisher of `w` in `p(y=1|x) = σ(w·x)` with labels drawn from the
/// model, measured through the library's per-sample gradient statistics.
/// Returns `(measured, x²·p(1−p))`.
pub fn logistic_fisher(x: f64, w: f64, samples: usize, seed: u64) -> (f64, f64) {
    let p = 1.0 / (1.0 + (-w * x).exp());
    let mut r = rng(seed);
    let ys: Vec<f64> = (0..samples).map(|_| if r.random::<f64>() < p { 1.0 } else { 0.0 }).collect();

    let mut g = Graph::new();
    let input = g.constant(Tensor::new(vec![samples, 1], vec![x; samples]).unwrap());
    let weight = g.param(Tensor::new(vec![1, 1], vec![w]).unwrap());
    let bias = g.constant(Tensor::zeros(&[1]));
    let pre = g.affine(input, weight, bias).unwrap();
    // −log p(y|x) = softplus(l) − y·l
    let y = g.constant(Tensor::new(vec![samples, 1], ys).unwrap());
    let sp = g.softplus(pre).unwrap();
    let yl = g.mul(y, pre).unwrap();
    let nll = g.sub(sp, yl).unwrap();
    let total = g.sum(nll).unwrap();
    g.backward(total).unwrap();
    let tap = AffineTap {
        side: Side::Encoder,
        index: 1,
        input,
        pre,
        weight,
        bias,
    };
    let measured = tap_statistics(&g, &tap).fisher();
    (measured, x * x * p * (1.0 - p))
}

/// Per-sample squared gradient norms by brute force: one backward pass per
/// sample. Returns `Σ_n ‖g_n‖²` for every layer in storage order.
pub fn brute_force_sum_sq(params: &ParamStore, wiring: &Wiring, x: &Tensor, eps: &Tensor) -> Vec<f64> {
    let mut sums = vec![0.0; params.layers().len()];
    for n in 0..x.rows() {
        let xn = x.select_rows(&[n]);
        let en = eps.select_rows(&[n]);
        let mut p = params.clone();
        let mut pass = forward(&p, wiring, &xn, &en).unwrap();
        pass.backward_mean(&mut p).unwrap();
        for (s, l) in sums.iter_mut().zip(p.layers()) {
            *s += l.weight.grad().unwrap().iter().map(|v| v * v).sum::<f64>()
                + l.bias.grad().unwrap().iter().map(|v| v * v).sum::<f64>();
        }
    }
    sums
}
