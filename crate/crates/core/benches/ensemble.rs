use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mflq_core::model::{CostSpec, MeanFieldSystem};
use mflq_core::riccati::integrate_backward;
use mflq_core::simulate::{simulate_paths_with, Execution, Feedback, InitialState, SimConfig};
use nalgebra::{dmatrix, dvector};

fn example() -> (MeanFieldSystem, CostSpec) {
    let sys = MeanFieldSystem::new(
        dmatrix![0.2, 0.1; -0.3, 0.1],
        dmatrix![0.4, 0.0; 0.1, 0.2],
        dmatrix![0.6; 0.3],
        dmatrix![0.2; 0.0],
        dmatrix![0.1, 0.0; 0.2, 0.1],
        dmatrix![0.7, 0.1; 0.0, 0.3],
        dmatrix![0.9; 0.2],
        dmatrix![0.3; 0.1],
    )
    .unwrap();
    let cost = CostSpec::infinite(
        dmatrix![1.0, 0.0; 0.0, 1.0],
        dmatrix![1.0, 0.2; 0.2, 1.0],
        dmatrix![1.0],
        dmatrix![1.0],
    )
    .unwrap();
    (sys, cost)
}

fn ensemble(c: &mut Criterion) {
    let (sys, cost) = example();
    let sol = integrate_backward(&sys, &cost, 1.0, 2000).unwrap();
    let fb = Feedback::Scheduled(&sol);
    let mut group = c.benchmark_group("ensemble");
    group.sample_size(10);
    for paths in [500, 2000] {
        let cfg = SimConfig::new(1e-3, 1.0, paths, 1, InitialState::Deterministic(dvector![1.0, -1.0])).unwrap();
        for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            group.bench_with_input(BenchmarkId::new(name, paths), &cfg, |b, cfg| {
                b.iter(|| simulate_paths_with(&sys, &fb, black_box(cfg), exec).unwrap())
            });
        }
    }
    group.finish();
}

fn riccati(c: &mut Criterion) {
    let (sys, cost) = example();
    c.bench_function("riccati/T=10", |b| {
        b.iter(|| integrate_backward(&sys, &cost, black_box(10.0), 40_000).unwrap())
    });
}

criterion_group!(benches, ensemble, riccati);
criterion_main!(benches);
