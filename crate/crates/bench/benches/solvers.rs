use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use scenario_prune::kernels::gram;
use scenario_prune::ode_ocp::{solve_ocp, AugmentedLagrangian};
use scenario_prune::reduced_set::{reduce, ReductionConfig};
use scenario_prune::scenario_lp::solve_minimax;
use scenario_prune::{KernelSpec, ScenarioMatrix};
use scenario_prune_bench::{ocp_problem, regression_embedding, regression_scenarios};
use std::hint::black_box;

fn bench_gram(c: &mut Criterion) {
    let mut group = c.benchmark_group("gram");
    for n in [100, 400] {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..11).map(|j| ((i * 11 + j) as f64 * 0.37).sin()).collect())
            .collect();
        let x = ScenarioMatrix::from_rows(&rows).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &x, |b, x| {
            b.iter(|| gram(&KernelSpec::default(), black_box(x)).unwrap())
        });
    }
    group.finish();
}

fn bench_reduce(c: &mut Criterion) {
    let mut group = c.benchmark_group("reduce");
    let (k, w) = regression_embedding(200);
    for lambda in [0.01, 0.0698, 0.3] {
        let cfg = ReductionConfig::new(lambda, w.clone());
        group.bench_with_input(BenchmarkId::from_parameter(lambda), &cfg, |b, cfg| {
            b.iter(|| reduce(black_box(&k), cfg).unwrap())
        });
    }
    group.finish();
}

fn bench_minimax(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_minimax");
    for n in [50, 200] {
        let scen = regression_scenarios(n);
        let all = scen.all_indices();
        group.bench_with_input(BenchmarkId::from_parameter(n), &all, |b, all| {
            b.iter(|| solve_minimax(black_box(&scen), all).unwrap())
        });
    }
    group.finish();
}

fn bench_ocp(c: &mut Criterion) {
    let (cfg, x0) = ocp_problem(100);
    let multipliers = vec![0.0; x0.len() * 2 * cfg.ocp.nodes()];
    let al = AugmentedLagrangian {
        cfg: &cfg.ocp,
        initial_states: &x0,
        multipliers: &multipliers,
        rho: 10.0,
    };
    let u = vec![5.0; cfg.ocp.steps];
    c.bench_function("ocp_gradient/100", |b| {
        b.iter(|| al.value_and_gradient(black_box(&u)).unwrap())
    });

    let (small, x0_small) = ocp_problem(20);
    let mut group = c.benchmark_group("solve_ocp");
    group.sample_size(10);
    group.bench_function("20", |b| {
        b.iter(|| solve_ocp(&small.ocp, black_box(&x0_small), None).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_gram, bench_reduce, bench_minimax, bench_ocp);
criterion_main!(benches);
