use std::f64::consts::PI;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use dualgeo_core::dynamics::{dual_equivalence, FlatHamiltonian, PhaseState};
use dualgeo_core::fields::{Gauge, ParticleParams, Quadratic, ScalarField};
use dualgeo_core::integrate::IntegratorConfig;
use dualgeo_core::maxwell5d::{periodic_solve, Grid4, GridField, TauAxis};

fn equivalence(c: &mut Criterion) {
    let p = ParticleParams::new(1.0, 0.0, 1.0).unwrap();
    let v: Arc<dyn ScalarField> = Arc::new(Quadratic {
        dim: 3,
        k: 1.0,
        axes: vec![0, 1, 2],
    });
    let h = FlatHamiltonian::new(p, Some(v), Gauge::zero(3)).unwrap();
    let st = PhaseState::new(vec![1.2, 0.0, 0.0], vec![0.0, 0.6, 0.2f64.sqrt()], 0.0);
    let cfg = IntegratorConfig::default();
    let mut group = c.benchmark_group("integrate");
    group.sample_size(10);
    group.bench_function("oscillator_equivalence_10_periods", |b| {
        b.iter(|| dual_equivalence(&h, &st, 20.0 * PI, &cfg).unwrap())
    });
    group.finish();
}

fn poisson(c: &mut Criterion) {
    let grid = Grid4::new([4, 16, 16, 16], [0.5; 4], [0.0; 4]).unwrap();
    let tau = TauAxis::new(16, 0.5, 0.0).unwrap();
    let rho = GridField::sample(grid, tau, 1, |x, t| {
        let r2 = (x[1] - 4.0).powi(2) + (x[2] - 4.0).powi(2) + (x[3] - 4.0).powi(2) + (t - 4.0).powi(2);
        vec![(-r2).exp()]
    });
    let mut group = c.benchmark_group("maxwell5d");
    group.sample_size(10);
    group.bench_function("periodic_solve_4x16x16x16x16", |b| b.iter(|| periodic_solve(&rho, 1.0).unwrap()));
    group.finish();
}

criterion_group!(benches, equivalence, poisson);
criterion_main!(benches);
