//! Benchmarks of the compute-heavy paths: the convolution kernel, a full
//! per-stage descriptor forward, a 68-patch batch, and the ridge solve.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lddr_core::net::{
    forward_patch, init_random_weights, stage_config_with_plan, ChannelPlan, Engine,
};
use lddr_core::tensor::{conv2d, ConvWeights, Tensor};
use lddr_core::train_stage;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Tensor {
    let data = (0..h * w * c).map(|_| rng.gen_range(0.0..1.0)).collect();
    Tensor::new(h, w, c, data).unwrap()
}

fn bench_conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = random_tensor(&mut rng, 92, 92, 1);
    let n = 8 * 1 * 11 * 11;
    let w = ConvWeights::new(
        11,
        11,
        1,
        8,
        1,
        (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect(),
        vec![0.0; 8],
    )
    .unwrap();
    c.bench_function("conv2d 92x92x1 k11s4 -> 8c", |b| {
        b.iter(|| conv2d(&input, &w, 4, 0).unwrap())
    });
}

fn bench_forward_stages(c: &mut Criterion) {
    let plan = ChannelPlan::slim(1);
    let weights = init_random_weights(11, 2.0, &plan).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut group = c.benchmark_group("forward_patch");
    for stage in 1..=4usize {
        let cfg = stage_config_with_plan(stage, &plan).unwrap();
        let patch = random_tensor(&mut rng, cfg.input_size, cfg.input_size, 1);
        group.bench_with_input(BenchmarkId::from_parameter(stage), &stage, |b, _| {
            b.iter(|| forward_patch(&patch, &cfg, &weights).unwrap())
        });
    }
    group.finish();
}

fn bench_batch_68(c: &mut Criterion) {
    let plan = ChannelPlan::slim(1);
    let weights = init_random_weights(11, 2.0, &plan).unwrap();
    let stages = (1..=4).map(|s| stage_config_with_plan(s, &plan).unwrap()).collect();
    let engine = Engine::new(weights, stages).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let patches: Vec<Tensor> = (0..68).map(|_| random_tensor(&mut rng, 21, 21, 1)).collect();
    c.bench_function("forward_batch 68 patches stage 4", |b| {
        b.iter(|| engine.forward_batch(4, &patches).unwrap())
    });
}

fn bench_train_stage(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // dual-route shape: N samples, high-dimensional features
    let n = 100;
    let d = 2000;
    let features = DMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0));
    let targets = DMatrix::from_fn(n, 136, |_, _| rng.gen_range(-1.0..1.0));
    c.bench_function("train_stage 100x2000 -> 136", |b| {
        b.iter(|| train_stage(&features, &targets, 1.0).unwrap())
    });
}

criterion_group!(
    benches,
    bench_conv,
    bench_forward_stages,
    bench_batch_68,
    bench_train_stage
);
criterion_main!(benches);
