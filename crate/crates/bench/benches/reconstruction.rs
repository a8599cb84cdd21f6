use std::f64::consts::PI;

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use gtomo_bench::state;
use gtomo_core::displaced_counting::{reconstruct_bw, AlphaGrid};
use gtomo_core::homodyne::{reconstruct_homodyne, HomodyneGrid, HomodyneKernel};
use gtomo_core::numerics::{c64, random_operator};
use gtomo_core::oscillator::displacement_block;
use gtomo_core::simulate::{shard_rng, Mode};
use gtomo_core::spin::{haar_frame, reconstruct_spin_mc, reconstruct_spin_quadrature, SpinFrame};
use gtomo_core::{DensityMatrix, FockSpace, SpinSystem};

fn numerics(c: &mut Criterion) {
    let mut g = c.benchmark_group("numerics");
    for dim in [21, 61] {
        g.bench_with_input(BenchmarkId::new("displacement_block", dim), &dim, |b, &d| {
            b.iter(|| displacement_block(d, black_box(c64(0.7, -0.4))))
        });
        let m = random_operator(&mut shard_rng(1, 0), dim);
        g.bench_with_input(BenchmarkId::new("psd_projection", dim), &m, |b, m| b.iter(|| DensityMatrix::from_estimate(black_box(m))));
    }
    g.finish();
}

fn spin(c: &mut Criterion) {
    let mut g = c.benchmark_group("spin");
    for two_s in [1, 6] {
        let sys = SpinSystem::new(two_s);
        let rho = state(sys.dim(), 2);
        let frame = SpinFrame::for_spin(two_s);
        g.bench_with_input(BenchmarkId::new("quadrature", two_s), &two_s, |b, _| {
            b.iter(|| reconstruct_spin_quadrature(&rho, &sys, &frame).unwrap())
        });
    }
    let sys = SpinSystem::new(1);
    let rho = state(2, 3);
    g.bench_function("monte_carlo_1e4", |b| b.iter(|| reconstruct_spin_mc(&rho, &sys, 10_000, black_box(4)).unwrap()));
    let haar = haar_frame(&SpinSystem::new(4), &SpinFrame::for_spin(4)).unwrap();
    let a = random_operator(&mut shard_rng(5, 0), 5);
    g.bench_function("haar_closure_2s4", |b| b.iter(|| haar.closure_residual(black_box(&a)).unwrap()));
    g.finish();
}

fn oscillator(c: &mut Criterion) {
    let mut g = c.benchmark_group("oscillator");
    g.sample_size(10);
    let space = FockSpace::new(10);
    let rho = space.coherent_state(c64(0.6, 0.3)).unwrap();
    g.bench_function("homodyne_kernel_nmax10", |b| {
        b.iter(|| HomodyneKernel::new(&space, 12.0, 6.0).unwrap().kernel(black_box(0.4), black_box(1.1)))
    });
    let grid = HomodyneGrid::new(22, 6.0, 400, 12.0).unwrap();
    g.bench_function("homodyne_exact_nmax10", |b| b.iter(|| reconstruct_homodyne(&rho, &space, &grid, Mode::Exact, 0, 0).unwrap()));
    let alpha = AlphaGrid::new(4.0, 40, PI).unwrap();
    g.bench_function("displaced_count_exact_nmax10", |b| b.iter(|| reconstruct_bw(&rho, &space, &alpha, Mode::Exact, 0, 0).unwrap()));
    g.bench_function("displaced_count_sampled_1e5", |b| {
        b.iter(|| reconstruct_bw(&rho, &space, &alpha, Mode::Sampled, 100_000, black_box(6)).unwrap())
    });
    g.finish();
}

criterion_group!(benches, numerics, spin, oscillator);
criterion_main!(benches);
