use criterion::{criterion_group, criterion_main, Criterion};
use dpc_core::campaign::{random_data, InstanceSpec};
use dpc_core::linalg::{solve_kkt, DEFAULT_TOL};
use dpc_core::ocp::{solve_full, solve_reduced};
use dpc_core::predictors::fit_ls;
use dpc_core::{ConstraintSet, ControlObjective, DMatrix, DPCProblem, DVector, Regularizer};
use std::hint::black_box;

fn instance(seed: u64) -> DPCProblem {
    let d = random_data(
        &InstanceSpec {
            io: true,
            ..Default::default()
        },
        seed,
    )
    .expect("instance");
    let (ny, nu) = (d.y_dim(), d.u_dim());
    let obj = ControlObjective::new(
        DMatrix::identity(ny, ny),
        DVector::from_element(ny, 0.5),
        DMatrix::identity(nu, nu) * 0.1,
        DVector::zeros(nu),
    )
    .expect("objective");
    let xi = DVector::from_element(d.xi_dim(), 0.1);
    DPCProblem::new(
        d,
        obj,
        ConstraintSet::default(),
        Regularizer::MixedProjection { l2: 0.5, l3: 100.0 },
        xi,
    )
    .expect("problem")
}

fn benches(c: &mut Criterion) {
    let prob = instance(3);
    let d = prob.data.clone();

    c.bench_function("fit_ls", |b| b.iter(|| fit_ls(black_box(&d), DEFAULT_TOL).unwrap()));

    let dm = d.d();
    let n = d.ell();
    let h = DMatrix::<f64>::identity(n, n) * 2.0;
    let g = DVector::zeros(n);
    let target = DVector::from_element(d.rows(), 0.3);
    c.bench_function("solve_kkt", |b| {
        b.iter(|| solve_kkt(black_box(&h), &g, &dm, &target, DEFAULT_TOL).unwrap())
    });

    c.bench_function("solve_full", |b| b.iter(|| solve_full(black_box(&prob)).unwrap()));
    c.bench_function("solve_reduced", |b| b.iter(|| solve_reduced(black_box(&prob)).unwrap()));
}

criterion_group!(solvers, benches);
criterion_main!(solvers);
