use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use patchflow::interp::interpolate_many;
use patchflow::{DtControl, Solver, Spectral, StepConfig};
use patchflow_bench::{circle_patch, smooth, BOX};

fn spectral(c: &mut Criterion) {
    let mut group = c.benchmark_group("spectral");
    for n in [64, 128, 256] {
        let sp = Spectral::new(n, BOX).unwrap();
        let f = smooth(n);
        group.bench_with_input(BenchmarkId::new("fft_roundtrip", n), &n, |b, _| {
            b.iter(|| sp.inverse(sp.forward(black_box(&f)).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("gradient", n), &n, |b, _| b.iter(|| sp.gradient(black_box(&f)).unwrap()));
        let u = sp.gradient(&f).unwrap();
        let du = sp.strain(&u).unwrap();
        group.bench_with_input(BenchmarkId::new("k_op", n), &n, |b, _| b.iter(|| sp.k_op(black_box(&du)).unwrap()));
    }
    group.finish();
}

fn interpolation(c: &mut Criterion) {
    let mut group = c.benchmark_group("interpolation");
    for n in [128, 256] {
        let (_, s) = circle_patch(n);
        let f = smooth(n);
        let pts = s.particles.pos.clone();
        group.bench_with_input(BenchmarkId::new("particles", n), &n, |b, _| {
            b.iter(|| interpolate_many(black_box(&f), black_box(&pts)))
        });
    }
    group.finish();
}

fn step(c: &mut Criterion) {
    let mut group = c.benchmark_group("step");
    group.sample_size(10);
    for n in [64, 128] {
        let (laws, s0) = circle_patch(n);
        let cfg = StepConfig { dt: DtControl::Fixed { dt: 2e-3 }, ..StepConfig::default() };
        let solver = Solver::new(n, BOX, laws, cfg).unwrap();
        group.bench_with_input(BenchmarkId::new("full_step", n), &n, |b, _| {
            b.iter_batched(|| s0.clone(), |mut s| solver.full_step(&mut s).unwrap(), criterion::BatchSize::LargeInput)
        });
    }
    group.finish();
}

criterion_group!(benches, spectral, interpolation, step);
criterion_main!(benches);
