use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qtflow_bench::{flat, smooth_field};
use qtflow_core::{
    energy_qf, p43_operator, q_curvature, BoundaryConditionSet, LinearOperator, ScalarField,
};

fn p43_apply(c: &mut Criterion) {
    let mut group = c.benchmark_group("p43_apply");
    for n in [8, 16, 24] {
        let geo = flat(n);
        let u = smooth_field(&geo);
        let op = p43_operator(&geo, BoundaryConditionSet::FLOW);
        let mut out = vec![0.0; op.dim()];
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| op.apply(black_box(u.values()), &mut out))
        });
    }
    group.finish();
}

fn curvature_and_energy(c: &mut Criterion) {
    let geo = flat(16);
    let u = smooth_field(&geo).map(|v| 0.1 * v);
    let f = ScalarField::constant(*geo.grid(), 1.0);
    c.bench_function("q_curvature/16", |b| {
        b.iter(|| q_curvature(black_box(&u), &geo).unwrap())
    });
    c.bench_function("energy_qf/16", |b| {
        b.iter(|| energy_qf(black_box(&u), &f, &geo).unwrap())
    });
}

criterion_group!(benches, p43_apply, curvature_and_energy);
criterion_main!(benches);
