use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use nms_bench::{model, states};
use nms_core::brackets::rhs_with;
use nms_core::metrics::simulate;
use nms_core::systems::Benchmark;
use nms_core::tape::param_grad;
use nms_core::{SolverConfig, SystemSpec};

fn vector_field(c: &mut Criterion) {
    let mut group = c.benchmark_group("rhs");
    for n in [4, 10, 30] {
        let m = model(n, 1);
        let x = &states(n, 1)[0];
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| m.rhs(black_box(x)).unwrap())
        });
    }
    group.finish();
}

fn parameter_gradient(c: &mut Criterion) {
    let mut group = c.benchmark_group("rhs_param_grad");
    for n in [4, 10] {
        let m = model(n, 1);
        let x = states(n, 1).remove(0);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                param_grad(&m.params, m.param_count(), |tape, th| {
                    let xs: Vec<_> = x.iter().map(|&v| tape.constant(v)).collect();
                    let f = rhs_with(&m.config, th, &xs)?;
                    Ok(f.into_iter().fold(tape.constant(0.0), |a, v| a + v * v))
                })
                .unwrap()
            })
        });
    }
    group.finish();
}

fn rollouts(c: &mut Criterion) {
    let times: Vec<f64> = (0..=100).map(|i| i as f64 * 0.05).collect();
    let solver = SolverConfig::default();
    let dno = SystemSpec::from_name("dno1").unwrap();
    let ic = dno.default_ic();
    c.bench_function("dopri5_dno1_5s", |b| b.iter(|| simulate(&dno, black_box(&ic), &times, &solver).unwrap()));
    let m = model(3, 1);
    c.bench_function("dopri5_nms3_5s", |b| {
        b.iter(|| simulate(&m, black_box(&[0.5, -0.2, 0.1]), &times, &solver).unwrap())
    });
}

criterion_group!(benches, vector_field, parameter_gradient, rollouts);
criterion_main!(benches);
