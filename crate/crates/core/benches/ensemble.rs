use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use jc_trajectories::dynamics::uniform_sample_times;
use jc_trajectories::ensemble::run_ensemble_with;
use jc_trajectories::{Execution, SimParams};

fn params(gamma: f64) -> SimParams {
    SimParams::builder()
        .drive(gamma / 2.0)
        .gamma(gamma)
        .t_final(0.5)
        .build()
        .unwrap()
}

pub fn ensemble_benchmark(c: &mut Criterion) {
    let mut group = c.benchmark_group("ensemble");
    group.sample_size(10);
    for gamma in [2.0, 20.0] {
        let p = params(gamma);
        let times = uniform_sample_times(p.t_final(), 20);
        group.bench_with_input(BenchmarkId::new("Parallel", gamma), &p, |b, p| {
            b.iter(|| run_ensemble_with(p, 64, 1, &times, Execution::Parallel).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("Sequential", gamma), &p, |b, p| {
            b.iter(|| run_ensemble_with(p, 64, 1, &times, Execution::Sequential).unwrap())
        });
    }
    group.finish();
}

pub fn step_benchmark(c: &mut Criterion) {
    let p = params(2.0);
    let u = jc_trajectories::dynamics::Unraveling::new(&p);
    let times = [p.t_final()];
    c.bench_function("trajectory_500_steps", |b| b.iter(|| u.run_trajectory(3, &times).unwrap()));
}

criterion_group!(benches, ensemble_benchmark, step_benchmark);
criterion_main!(benches);
