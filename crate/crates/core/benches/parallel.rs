use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use permopt::assembly::{assemble_div_penalty_with, assemble_mass_with, PenaltyQuadrature};
use permopt::config::pi_cube;
use permopt::par::Execution;
use permopt::{DofKind, DofSpace, Grid, SymMatrixField};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn setup(n: usize) -> (DofSpace, SymMatrixField) {
    let g = Grid::from_spec(&pi_cube(n)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let eps = permopt::permittivity::smooth_random_field(&g, &Default::default(), 0.6, 1.8, &mut rng);
    (DofSpace::new(&g, DofKind::VectorTangentialZero), eps)
}

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn assembly(c: &mut Criterion) {
    let mut group = c.benchmark_group("assemble_mass");
    for n in [8, 16] {
        let (space, eps) = setup(n);
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| assemble_mass_with(&space, &eps, exec).unwrap())
            });
        }
    }
    group.finish();

    let mut group = c.benchmark_group("assemble_div_penalty");
    for n in [8, 16] {
        let (space, eps) = setup(n);
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| assemble_div_penalty_with(&space, &eps, PenaltyQuadrature::Reduced, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn mass(c: &mut Criterion) {
    let mut group = c.benchmark_group("frobenius_mass");
    let (_, eps) = setup(32);
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| eps.frobenius_mass_with(exec)));
    }
    group.finish();
}

criterion_group!(benches, assembly, mass);
criterion_main!(benches);
