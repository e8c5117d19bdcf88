use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qpop_bench::{engine, group, puzzles, txs};
use qpop_core::crypto::{DlogSolver, SolverBudget};
use qpop_core::harness::committee_mc;

fn dlog(c: &mut Criterion) {
    let mut g = c.benchmark_group("dlog_solve");
    for bits in [16u32, 24, 32] {
        let gp = group(bits);
        let solver = DlogSolver::new(gp);
        let targets = puzzles(&gp, 64);
        g.bench_with_input(BenchmarkId::from_parameter(bits), &targets, |b, ts| {
            b.iter(|| {
                for &t in ts {
                    solver.solve(t, &mut SolverBudget::unlimited()).unwrap();
                }
            })
        });
    }
    g.finish();
}

fn chain(c: &mut Criterion) {
    c.bench_function("committee_mc_n100_T1000_x100", |b| {
        b.iter(|| committee_mc(100, 0.15, 1000, 100, 1).unwrap())
    });
}

fn pbft(c: &mut Criterion) {
    let mut g = c.benchmark_group("pbft_period");
    g.sample_size(20);
    for n in [4u64, 7, 16] {
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| {
                let mut e = engine(n, 1);
                e.run_period(&txs(0, 4))
            })
        });
    }
    g.finish();
}

criterion_group!(benches, dlog, chain, pbft);
criterion_main!(benches);
