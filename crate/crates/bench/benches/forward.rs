use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use maskpos_bench::{desk_spec, inputs};
use maskpos_core::simulation::forward_trace;
use maskpos_core::{run_experiment, LayerSpec, Mode};

fn bench_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    let spec = LayerSpec::default();
    for n in [16usize, 50, 128] {
        let x = inputs(n, 64, 1);
        group.bench_with_input(BenchmarkId::new("nope_4_layers", n), &x, |b, x| {
            b.iter(|| forward_trace(black_box(x), &spec, 4).unwrap())
        });
    }
    let rope = LayerSpec {
        rope: Some(10_000.0),
        ..spec
    };
    let x = inputs(50, 64, 1);
    group.bench_function("rope_4_layers/50", |b| {
        b.iter(|| forward_trace(black_box(&x), &rope, 4).unwrap())
    });
    group.finish();
}

fn bench_experiment(c: &mut Criterion) {
    let mut group = c.benchmark_group("experiment");
    group.sample_size(10);
    for mode in [Mode::Nope, Mode::RopeDecoder] {
        let spec = desk_spec(mode, 1_024);
        group.bench_function(mode.name(), |b| b.iter(|| run_experiment(black_box(&spec)).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_forward, bench_experiment);
criterion_main!(benches);
