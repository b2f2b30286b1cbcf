use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use scvae::data::parse_idx;
use scvae::fisher::layer_fisher;
use scvae::model::forward;
use scvae::{Activation, Graph, SkipMode};
use scvae_bench::{idx_images, network, noise, uniform};

fn affine(c: &mut Criterion) {
    let mut group = c.benchmark_group("affine");
    for width in [64usize, 256] {
        let x = uniform(100, width, 1);
        let w = uniform(width, width, 2);
        let b = uniform(1, width, 3).reshape(vec![width]).unwrap();
        group.bench_with_input(BenchmarkId::new("forward_backward", width), &width, |bench, _| {
            bench.iter(|| {
                let mut g = Graph::new();
                let xv = g.constant(x.clone());
                let wv = g.param(w.clone());
                let bv = g.param(b.clone());
                let h = g.affine(xv, wv, bv).unwrap();
                let a = g.activation(Activation::Tanh, h).unwrap();
                let loss = g.sum(a).unwrap();
                g.backward(loss).unwrap();
                black_box(g.grad(wv).map(|v| v[0]))
            })
        });
    }
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_backward");
    for depth in [1usize, 5] {
        let (params, wiring) = network(64, depth, 64, SkipMode::EveryLayer);
        let x = uniform(100, 64, 4);
        let eps = noise(100, 16, 5);
        group.bench_with_input(BenchmarkId::from_parameter(depth), &depth, |bench, _| {
            bench.iter(|| {
                let mut p = params.clone();
                let mut pass = forward(&p, &wiring, &x, &eps).unwrap();
                black_box(pass.backward_mean(&mut p).unwrap())
            })
        });
    }
    group.finish();
}

fn fisher_probe(c: &mut Criterion) {
    let (params, wiring) = network(64, 5, 64, SkipMode::None);
    let x = uniform(256, 64, 6);
    let eps = noise(256, 16, 7);
    c.bench_function("layer_fisher/256x5", |bench| {
        bench.iter(|| black_box(layer_fisher(&params, &wiring, &x, &eps).unwrap().overall_mean))
    });
}

fn idx(c: &mut Criterion) {
    let bytes = idx_images(1000);
    c.bench_function("parse_idx/1000", |bench| bench.iter(|| black_box(parse_idx(&bytes).unwrap())));
}

criterion_group!(benches, affine, training_step, fisher_probe, idx);
criterion_main!(benches);
