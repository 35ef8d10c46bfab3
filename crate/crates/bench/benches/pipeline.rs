//! Hot-path benchmarks: generator assembly, the theta integral, one full
//! quadrature node, and the closed-form pipeline.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use slowdrive_core::lindblad::build_oscillator_with_tail_tol;
use slowdrive_core::models::OscillatorMatrixModel;
use slowdrive_core::opalg::delta_centered;
use slowdrive_core::oscillator::{self, OscillatorParams};
use slowdrive_core::thermo::{complete_report, DrivenSystem, GridPolicy};
use slowdrive_core::HermitianOperator;

fn params() -> OscillatorParams {
    OscillatorParams { omega0: 1.0, t_c: 0.6, t_h: 2.0, gamma: 1.0, tau: 100.0 }
}

fn bench_generator_build(c: &mut Criterion) {
    c.bench_function("lindbladian_build_dim60", |b| {
        b.iter(|| build_oscillator_with_tail_tol(black_box(1.0), 2.0, 1.0, 60, 1e-1).unwrap())
    });
}

fn bench_theta_integral(c: &mut Criterion) {
    let l = build_oscillator_with_tail_tol(1.0, 2.0, 1.0, 60, 1e-1).unwrap();
    let number =
        HermitianOperator::from_real_diag(&(0..60).map(|n| n as f64).collect::<Vec<_>>());
    let da = delta_centered(l.stationary(), &number).unwrap();
    // First call pays the sector factorization; steady state is the warm cost.
    let _ = l.theta_integral(&da).unwrap();
    c.bench_function("theta_integral_warm_dim60", |b| {
        b.iter(|| l.theta_integral(black_box(&da)).unwrap())
    });
}

fn bench_matrix_node(c: &mut Criterion) {
    let model = OscillatorMatrixModel::new(params(), 60).unwrap();
    c.bench_function("matrix_pipeline_node_dim60", |b| {
        b.iter(|| {
            let t = black_box(23.0);
            let l = model.lindbladian(t).unwrap();
            let hdot = model.hamiltonian_dot(t).unwrap();
            let dh = delta_centered(l.stationary(), &hdot).unwrap();
            l.theta_integral(&dh).unwrap()
        })
    });
}

fn bench_analytic_pipeline(c: &mut Criterion) {
    c.bench_function("oscillator_analytic_evaluate", |b| {
        b.iter(|| oscillator::evaluate(black_box(&params())).unwrap())
    });
}

fn bench_qubit_report(c: &mut Criterion) {
    let model = slowdrive_core::models::random_model(7, 2, 40.0).unwrap();
    let grid = GridPolicy { initial_nodes: 33, max_nodes: 257, rel_tol: 1e-6 };
    c.bench_function("qubit_complete_report", |b| {
        b.iter(|| complete_report(black_box(&model), &grid).unwrap())
    });
    let _ = model.protocol();
}

criterion_group!(
    benches,
    bench_generator_build,
    bench_theta_integral,
    bench_matrix_node,
    bench_analytic_pipeline,
    bench_qubit_report
);
criterion_main!(benches);
