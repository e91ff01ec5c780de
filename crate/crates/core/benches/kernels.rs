use std::sync::Arc;

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use hkbary::cost::least_cost_table;
use hkbary::demo::gaussian_inputs;
use hkbary::solver::anneal;
use hkbary::{ArgminMode, Exec, GroundCostKind, GroundGrid, MarginalPenalty, Point, ScalingProblem, SolverConfig};

const POLICIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn table(c: &mut Criterion) {
    let mut group = c.benchmark_group("least_cost_table");
    for n in [60, 120] {
        let grid = Arc::new(GroundGrid::line(0.0, 1.0, n).unwrap());
        let pts: Vec<Point> = grid.points().to_vec();
        let inputs = vec![pts.clone(), pts];
        for (name, exec) in POLICIES {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| {
                    least_cost_table(
                        black_box(&inputs),
                        grid.clone(),
                        &[0.5, 0.5],
                        GroundCostKind::Hk,
                        ArgminMode::GridRestricted,
                        exec,
                    )
                    .unwrap()
                })
            });
        }
    }
    group.finish();
}

fn scaling(c: &mut Criterion) {
    let mut group = c.benchmark_group("anneal");
    group.sample_size(10);
    for n in [100, 200] {
        let (grid, mu1, mu2) = gaussian_inputs(n).unwrap();
        let pts: Vec<Point> = grid.points().to_vec();
        let t = least_cost_table(
            &[pts.clone(), pts],
            grid.clone(),
            &[0.5, 0.5],
            GroundCostKind::Hk,
            ArgminMode::GridRestricted,
            Exec::Parallel,
        )
        .unwrap();
        let problem = ScalingProblem::new(
            t.values().clone(),
            vec![mu1.masses().to_vec(), mu2.masses().to_vec()],
            vec![MarginalPenalty::Soft(0.5); 2],
        )
        .unwrap();
        for (name, exec) in POLICIES {
            let cfg = SolverConfig { exec, ..SolverConfig::default() };
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| anneal(black_box(&problem), &cfg).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, table, scaling);
criterion_main!(benches);
