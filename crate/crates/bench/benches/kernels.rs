use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use hazboard::approx::{Activation, MlpLayout};
use hazboard::blackboard::{Blackboard, BlackboardEntry};
use hazboard::hazard::lookahead;
use hazboard::trainer::{compute_gae, Trainer};
use hazboard::ExperimentConfig;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn read_topk(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (n, d) = (8, 8);
    let mut bb = Blackboard::new(1, n, d);
    for j in 0..n {
        bb.write(BlackboardEntry {
            x: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            u: vec![0.0; d],
            y: 0.5,
            p: 0.9,
            w: true,
            env: 0,
            agent: j,
        })
        .unwrap();
    }
    let query: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    c.bench_function("read_topk n=8 d=8 k=4", |b| b.iter(|| bb.read_topk(0, 0, &query, 4).unwrap()));
}

fn hazard_lookahead(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z: Vec<bool> = (0..8192).map(|_| rng.random_bool(0.1)).collect();
    let ends: Vec<bool> = (0..8192).map(|t| t % 200 == 199).collect();
    c.bench_function("lookahead T=8192 H=8", |b| b.iter(|| lookahead(&z, 8, &ends).unwrap()));
}

fn gae(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = 512;
    let signal: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
    let values: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
    let done: Vec<bool> = (0..t).map(|s| s % 200 == 199).collect();
    c.bench_function("gae T=512", |b| b.iter(|| compute_gae(&signal, &values, 0.0, 0.99, 0.95, &done).unwrap()));
}

fn mlp(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let layout = MlpLayout::new(&[32, 64, 64, 8], Activation::Identity, 0);
    let mut params = vec![0.0; layout.num_params()];
    layout.init(&mut params, &mut rng, 0.01);
    let x = Array2::from_shape_fn((512, 32), |_| rng.random_range(-1.0..1.0));
    let d_out = Array2::from_shape_fn((512, 8), |_| rng.random_range(-1.0..1.0));
    c.bench_function("mlp forward 512x32->64->64->8", |b| b.iter(|| layout.forward(&params, x.view()).unwrap()));
    let tape = layout.forward(&params, x.view()).unwrap();
    let mut grad = vec![0.0; params.len()];
    c.bench_function("mlp backward 512x32->64->64->8", |b| {
        b.iter(|| layout.backward(&params, &tape, d_out.view(), &mut grad))
    });
}

fn rollout(c: &mut Criterion) {
    let mut cfg = ExperimentConfig::default();
    cfg.run.rollout_len = 64;
    let mut group = c.benchmark_group("trainer");
    group.sample_size(10);
    group.bench_function("collect 64 steps x 16 envs", |b| {
        b.iter_batched(
            || Trainer::new(cfg.clone(), 0).unwrap(),
            |mut t| t.collect().unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.bench_function("update on one rollout", |b| {
        b.iter_batched(
            || {
                let mut t = Trainer::new(cfg.clone(), 0).unwrap();
                let (buf, _) = t.collect().unwrap();
                (t, buf)
            },
            |(mut t, buf)| t.update(&buf).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, read_topk, hazard_lookahead, gae, mlp, rollout);
criterion_main!(benches);
