use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qtflow_bench::{flat, smooth_field};
use qtflow_core::qflow::{qflow_initial, qflow_step};
use qtflow_core::tflow::extend;
use qtflow_core::{Face, FlowConfig, ScalarField};

fn extension(c: &mut Criterion) {
    let mut group = c.benchmark_group("biharmonic_extension");
    group.sample_size(10);
    for n in [8, 12] {
        let geo = flat(n);
        let v = smooth_field(&geo).trace(Face::Both);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| extend(black_box(&v), &geo, 1e-10).unwrap())
        });
    }
    group.finish();
}

fn q_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("qflow_step");
    group.sample_size(10);
    for n in [8, 12] {
        let geo = flat(n);
        let f = ScalarField::constant(*geo.grid(), 1.0);
        let cfg = FlowConfig {
            dt0: 1e-3,
            ..FlowConfig::default()
        };
        let u0 = smooth_field(&geo).map(|v| 0.1 * v);
        let s0 = qflow_initial(u0, &geo, &f, &cfg).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| qflow_step(black_box(&s0), &geo, &f, &cfg, s0.diagnostics.measure).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, extension, q_step);
criterion_main!(benches);
