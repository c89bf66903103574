use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use bloch_zener::experiments::{branch_probabilities, eps_point, sweep, SweepPoint};
use bloch_zener::parallel::Execution;
use bloch_zener::{solve_bands, BlochProblem, ScaledParams, SpatialGrid};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn band_mesh(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_bands");
    let params = ScaledParams::default().with_eps(0.0825);
    for (name, exec) in MODES {
        let problem = BlochProblem::new(params).with_mesh_size(256).with_execution(exec);
        group.bench_function(BenchmarkId::new(name, 256), |b| b.iter(|| solve_bands(black_box(&problem), 4).unwrap()));
    }
    group.finish();
}

fn eps_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("eps_sweep");
    group.sample_size(10);
    let grid = SpatialGrid::symmetric(4096, 256).unwrap();
    let values: Vec<f64> = (0..8).map(|i| -0.2 + 0.05 * i as f64).collect();
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, values.len()), |b| {
            b.iter(|| {
                sweep(exec, &values, |eps| {
                    let psi = eps_point(&ScaledParams::default().with_eps(eps), &grid, 512)?;
                    let (lower, upper) = branch_probabilities(&psi)?;
                    Ok(SweepPoint { value: eps, lower, upper, absorbed: psi.absorbed_norm() })
                })
                .unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, band_mesh, eps_sweep);
criterion_main!(benches);
