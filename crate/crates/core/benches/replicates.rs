use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rbcbo::batching::estimate_p_m0;
use rbcbo::ergodicity::{random_property_suite, MatrixProperty};
use rbcbo::exec::Execution;
use rbcbo::harness::{benchmark, BenchmarkConfig};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn success_table(c: &mut Criterion) {
    let mut cfg = BenchmarkConfig::rastrigin_default(16);
    cfg.template.particles = 50;
    cfg.template.max_steps = 2_000;
    cfg.dimensions = vec![2];
    cfg.batch_sizes = vec![50, 10];
    let mut group = c.benchmark_group("benchmark_replicates");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| benchmark(&cfg, exec).unwrap())
        });
    }
    group.finish();
}

fn connectivity_estimate(c: &mut Criterion) {
    let mut group = c.benchmark_group("p_m0_monte_carlo");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| estimate_p_m0(8, 4, 3, 20_000, 1, exec).unwrap())
        });
    }
    group.finish();
}

fn matrix_suite(c: &mut Criterion) {
    let mut group = c.benchmark_group("alpha_suite");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| random_property_suite(MatrixProperty::SuperAdditivity, 2_000, 8, 1, exec))
        });
    }
    group.finish();
}

criterion_group!(benches, success_table, connectivity_estimate, matrix_suite);
criterion_main!(benches);
