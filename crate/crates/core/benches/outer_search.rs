//! Exhaustive outer search on the Table I system.
//!
//! Default build: the global rayon pool against a one-thread pool.
//! `--no-default-features`: the sequential fallback, for the same sizes.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use storemkt_core::config::preset;
use storemkt_core::dispatch::{solve_outer, DispatchProblem};
use storemkt_core::exec;

fn fleet(n: usize) -> (DispatchProblem, storemkt_core::dispatch::SolverConfig) {
    let config = preset("table1").unwrap();
    let mut problem = config.problem().unwrap();
    problem.evs.truncate(n);
    problem.params.truncate(n);
    (problem, config.solver_config())
}

fn outer_search(c: &mut Criterion) {
    let mut group = c.benchmark_group("outer_search");
    group.sample_size(10);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    for n in [1usize, 2, 3] {
        let (problem, solver) = fleet(n);
        if exec::is_parallel() {
            group.bench_with_input(BenchmarkId::new("global_pool", n), &n, |b, _| {
                b.iter(|| black_box(solve_outer(&problem, &solver).unwrap().q_star))
            });
            group.bench_with_input(BenchmarkId::new("one_thread_pool", n), &n, |b, _| {
                b.iter(|| one.install(|| black_box(solve_outer(&problem, &solver).unwrap().q_star)))
            });
        } else {
            group.bench_with_input(BenchmarkId::new("sequential", n), &n, |b, _| {
                b.iter(|| black_box(solve_outer(&problem, &solver).unwrap().q_star))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, outer_search);
criterion_main!(benches);
