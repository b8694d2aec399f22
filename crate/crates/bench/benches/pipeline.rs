use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use sdfspectral::basis::BasisSpec;
use sdfspectral::oracle::Ar1Design;
use sdfspectral::pfeig;
use sdfspectral::sievemat::{BasisEvaluations, SieveMatrices, StatePanel};
use sdfspectral::simkit;
use sdfspectral::valuefn::{self, FixedPointConfig};

fn sample(n: usize) -> (StatePanel, Vec<f64>) {
    let panel = simkit::simulate_ar1(&Ar1Design::baseline(), n, 7).unwrap();
    let m = panel.growth().unwrap().iter().map(|g| 0.994 * g.powf(-15.0)).collect();
    (panel, m)
}

fn sieve_matrices(c: &mut Criterion) {
    let mut group = c.benchmark_group("sieve_matrices");
    for n in [400, 3200] {
        let (panel, m) = sample(n);
        let basis = BasisSpec::Hermite { degree: 7 }.build(panel.basis_data()).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                let evals = BasisEvaluations::new(&basis, &panel).unwrap();
                SieveMatrices::from_evaluations(&basis, &evals, black_box(&m)).unwrap()
            })
        });
    }
    group.finish();
}

fn eigensolve(c: &mut Criterion) {
    let (panel, m) = sample(1600);
    let mut group = c.benchmark_group("eigensolve");
    for degree in [3, 7, 11] {
        let basis = BasisSpec::Hermite { degree }.build(panel.basis_data()).unwrap();
        let evals = BasisEvaluations::new(&basis, &panel).unwrap();
        let mats = SieveMatrices::from_evaluations(&basis, &evals, &m).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(degree + 1), &mats, |b, mats| {
            b.iter(|| pfeig::solve_normalized(black_box(mats)).unwrap())
        });
    }
    group.finish();
}

fn fixed_point(c: &mut Criterion) {
    let (panel, _) = sample(1600);
    let basis = BasisSpec::Hermite { degree: 7 }.build(panel.basis_data()).unwrap();
    let evals = BasisEvaluations::new(&basis, &panel).unwrap();
    let growth = panel.growth().unwrap().to_vec();
    c.bench_function("fixed_point/k8_n1600", |b| {
        b.iter(|| valuefn::solve_with_evaluations(&evals, black_box(&growth), 0.994, 15.0, &FixedPointConfig::default()).unwrap())
    });
}

criterion_group!(benches, sieve_matrices, eigensolve, fixed_point);
criterion_main!(benches);
