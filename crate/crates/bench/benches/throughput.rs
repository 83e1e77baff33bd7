use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ssrgan::kernels::{conv2d_backward, conv2d_forward, GradMask};
use ssrgan::training::{DatasetConfig, StepOptions};
use ssrgan::{
    build_generator, DiscriminatorConfig, GeneratorConfig, Network, Pass, Rng, Tensor, TrainConfig, Trainer,
};

fn conv(c: &mut Criterion) {
    let mut rng = Rng::new(1);
    let mut group = c.benchmark_group("conv2d_3x3");
    for (channels, size) in [(16, 32), (64, 32), (64, 64)] {
        let x = Tensor::<f32>::uniform(&[4, channels, size, size], -1.0, 1.0, &mut rng).unwrap();
        let w = Tensor::<f32>::uniform(&[channels, channels, 3, 3], -0.1, 0.1, &mut rng).unwrap();
        let b = Tensor::<f32>::zeros(&[channels]).unwrap();
        let id = format!("{channels}ch_{size}px");
        group.bench_with_input(BenchmarkId::new("forward", &id), &(), |bench, _| {
            bench.iter(|| conv2d_forward(black_box(&x), &w, Some(&b), 1, 1).unwrap())
        });
        let y = conv2d_forward(&x, &w, Some(&b), 1, 1).unwrap();
        let mask = GradMask { input: true, weight: true, bias: true };
        group.bench_with_input(BenchmarkId::new("backward", &id), &(), |bench, _| {
            bench.iter(|| conv2d_backward(black_box(&x), &w, &y, 1, 1, mask).unwrap())
        });
    }
    group.finish();
}

fn generator(c: &mut Criterion) {
    let mut rng = Rng::new(2);
    let mut gen = build_generator::<f32>(&GeneratorConfig::default(), &mut rng).unwrap();
    let mut group = c.benchmark_group("generator_forward");
    group.sample_size(10).measurement_time(Duration::from_secs(10));
    for size in [32, 128] {
        let x = Tensor::<f32>::uniform(&[1, 3, size, size], -1.0, 1.0, &mut rng).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(size), &x, |bench, x| {
            bench.iter(|| gen.infer(black_box(x), Pass::EVAL).unwrap())
        });
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step_32px_batch4");
    group.sample_size(10).measurement_time(Duration::from_secs(15));
    let widths = [
        ("narrow", 16, vec![16, 32, 64, 128]),
        ("default", 64, vec![64, 128, 256, 512]),
    ];
    for (name, width, d) in widths {
        let cfg = TrainConfig {
            dataset: DatasetConfig { synthetic_count: 4, ..DatasetConfig::default() },
            image_size: 32,
            batch_size: 4,
            generator: GeneratorConfig { width, ..GeneratorConfig::default() },
            discriminator: DiscriminatorConfig { block_channels: d, ..DiscriminatorConfig::default() },
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(&cfg).unwrap();
        let batch = Tensor::<f32>::uniform(&[4, 3, 32, 32], -1.0, 1.0, &mut Rng::new(3)).unwrap();
        let opts = StepOptions { adversarial_weight: cfg.adversarial_weight, train_discriminator: true };
        group.bench_function(name, |bench| {
            bench.iter(|| trainer.train_step(black_box(&batch), cfg.lr0, opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, conv, generator, train_step);
criterion_main!(benches);
