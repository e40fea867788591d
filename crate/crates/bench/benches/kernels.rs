use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use tbnn_bench::{cnn_fixture, filled, moons_potential};
use tbnn_core::autodiff::Graph;
use tbnn_core::posterior::Target;
use tbnn_core::samplers::{ggmc_step, SamplerState};
use tbnn_core::weightstats::singular_values;

fn matmul(c: &mut Criterion) {
    let a = filled(&[128, 256], 1);
    let b = filled(&[256, 128], 2);
    c.bench_function("matmul_128x256x128", |bch| {
        bch.iter(|| {
            let mut g = Graph::<f64>::new();
            let x = g.constant(a.clone()).unwrap();
            let y = g.constant(b.clone()).unwrap();
            black_box(g.matmul(x, y).unwrap())
        })
    });
}

fn conv(c: &mut Criterion) {
    let x = filled(&[32, 8, 14, 14], 3);
    let f = filled(&[16, 8, 3, 3], 4);
    c.bench_function("conv2d_32x8x14x14_k3", |bch| {
        bch.iter(|| {
            let mut g = Graph::<f64>::new();
            let xv = g.constant(x.clone()).unwrap();
            let fv = g.constant(f.clone()).unwrap();
            black_box(g.conv2d(xv, fv, 1).unwrap())
        })
    });
}

fn forward(c: &mut Criterion) {
    let (model, params, x) = cnn_fixture(64);
    c.bench_function("cnn_forward_64", |bch| bch.iter(|| black_box(model.forward(&params, &x).unwrap())));
}

fn gradient(c: &mut Criterion) {
    let (pot, init) = moons_potential(512);
    let batch: Vec<usize> = (0..128).collect();
    c.bench_function("fcnn_minibatch_grad_128", |bch| {
        bch.iter(|| black_box(pot.minibatch_grad(&init, &batch).unwrap()))
    });
}

fn ggmc(c: &mut Criterion) {
    let (pot, init) = moons_potential(512);
    let batch: Vec<usize> = (0..128).collect();
    let mut state = SamplerState::new(init, 5);
    c.bench_function("ggmc_step_fcnn_128", |bch| {
        bch.iter(|| {
            let mut f = |w: &tbnn_core::ParamTree| pot.minibatch_grad(w, &batch);
            black_box(ggmc_step(&mut state, &mut f, 1e-3, 100.0, 1.0).unwrap())
        })
    });
}

fn svd(c: &mut Criterion) {
    let m = filled(&[100, 200], 6);
    c.bench_function("singular_values_100x200", |bch| bch.iter(|| black_box(singular_values(&m).unwrap())));
}

criterion_group!(benches, matmul, conv, forward, gradient, ggmc, svd);
criterion_main!(benches);
