//! Benchmarks for the operations that dominate training and evaluation
//! time: the recurrent step, the full forward/backward pass, the optimizer
//! update, candidate ranking, and the closed-form baseline fit.

use criterion::{criterion_group, criterion_main, Criterion};
use imaginet::layers::{ActivationConfig, GruParams};
use imaginet::model::{self, ModelDims, ModelParams};
use imaginet::optim::{Adam, AdamConfig};
use imaginet::{baseline, eval, Rng, Vector};
use std::hint::black_box;

fn desk_sized() -> (ModelParams, Vec<usize>, Vector, ActivationConfig) {
    let dims = ModelDims { vocab_size: 60, embedding_dim: 32, hidden_dim: 32, feature_dim: 16 };
    let mut rng = Rng::new(99);
    let params = ModelParams::init(dims, 0.1, &mut rng);
    let sentence: Vec<usize> = (0..8).map(|_| rng.below(60) as usize).collect();
    let target =
        Vector::from_vec((0..16).map(|_| rng.uniform_in(0.0, 5.0)).collect());
    (params, sentence, target, ActivationConfig::default())
}

fn bench_gru_step(c: &mut Criterion) {
    let mut rng = Rng::new(7);
    let params = GruParams::init(32, 32, 0.1, &mut rng);
    let act = ActivationConfig::default();
    let x = Vector::from_vec((0..32).map(|_| rng.uniform_in(-1.0, 1.0)).collect());
    let h = Vector::from_vec((0..32).map(|_| rng.uniform_in(0.0, 1.0)).collect());
    c.bench_function("gru_step 32x32", |b| {
        b.iter(|| imaginet::layers::gru_step(&params, black_box(&h), black_box(&x), &act).unwrap())
    });
}

fn bench_forward(c: &mut Criterion) {
    let (params, sentence, _, act) = desk_sized();
    c.bench_function("forward 8 tokens desk dims", |b| {
        b.iter(|| model::forward(&params, black_box(&sentence), &act).unwrap())
    });
}

fn bench_gradients(c: &mut Criterion) {
    let (params, sentence, target, act) = desk_sized();
    c.bench_function("forward+backward 8 tokens desk dims", |b| {
        b.iter(|| {
            model::example_gradients(&params, black_box(&sentence), &target, 0.1, &act).unwrap()
        })
    });
}

fn bench_adam_step(c: &mut Criterion) {
    let (params, sentence, target, act) = desk_sized();
    let (_, grads) = model::example_gradients(&params, &sentence, &target, 0.1, &act).unwrap();
    let mut params = params;
    let mut opt = Adam::new(&params, AdamConfig::default());
    c.bench_function("adam step desk dims", |b| {
        b.iter(|| opt.step(&mut params, black_box(&grads)).unwrap())
    });
}

fn bench_rank_candidates(c: &mut Criterion) {
    let mut rng = Rng::new(11);
    let query = Vector::from_vec((0..16).map(|_| rng.uniform_in(0.0, 5.0)).collect());
    let pool: Vec<Vector> = (0..512)
        .map(|_| Vector::from_vec((0..16).map(|_| rng.uniform_in(0.0, 5.0)).collect()))
        .collect();
    c.bench_function("rank 512 candidates", |b| {
        b.iter(|| eval::rank_candidates(black_box(&query), &pool).unwrap())
    });
}

fn bench_ridge_fit(c: &mut Criterion) {
    let mut rng = Rng::new(23);
    let inputs: Vec<Vector> = (0..200)
        .map(|_| Vector::from_vec((0..60).map(|_| rng.below(3) as f64).collect()))
        .collect();
    let targets: Vec<Vector> = (0..200)
        .map(|_| Vector::from_vec((0..16).map(|_| rng.uniform_in(0.0, 5.0)).collect()))
        .collect();
    c.bench_function("ridge fit 200x60 to 16", |b| {
        b.iter(|| baseline::fit_ridge(black_box(&inputs), &targets, 1.0).unwrap())
    });
}

criterion_group!(
    core_ops,
    bench_gru_step,
    bench_forward,
    bench_gradients,
    bench_adam_step,
    bench_rank_candidates,
    bench_ridge_fit
);
criterion_main!(core_ops);
