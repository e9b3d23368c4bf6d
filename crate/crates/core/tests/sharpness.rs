mod common;

use common::random_problem;
use msam_core::autodiff::{Activation, Head, ModelSpec};
use msam_core::data::Dataset;
use msam_core::linalg::{dominant_eigenvalue, Matrix};
use msam_core::sharpness::{dense_hessian, full_hvp, lambda_max_power, DENSE_HESSIAN_LIMIT, HVP_CHUNK};
use msam_core::{Error, ParamVector};

fn least_squares(n: usize, p: usize, seed: u64) -> (Dataset, Vec<Vec<f64>>) {
    let mut r = common::rng(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| common::normal(&mut r)).collect())
        .collect();
    let y = (0..n).map(|_| common::normal(&mut r)).collect();
    (Dataset::from_targets(rows.concat(), p, y, 1).unwrap(), rows)
}

#[test]
fn diagonal_quadratic_top_eigenvalue() {
    // Rows (±√3, 0) and (0, ±1) give H = diag(3, 1) on the weights and 2 on the bias.
    let a = 3f64.sqrt();
    let ds = Dataset::from_targets(vec![a, 0.0, -a, 0.0, 0.0, 1.0, 0.0, -1.0], 2, vec![0.0; 4], 1).unwrap();
    let spec = ModelSpec::new(vec![2, 1], Activation::Relu, Head::MeanSquaredError).unwrap();
    let w = ParamVector::zeros(spec.num_params());
    let est = lambda_max_power(&spec, &w, &ds, 10_000, 1e-14, 0).unwrap();
    assert!(est.converged && est.iterations >= 1);
    assert!((est.lambda_max - 3.0).abs() <= 1e-8, "{}", est.lambda_max);
}

#[test]
fn least_squares_hessian_is_gram_matrix() {
    let (ds, rows) = least_squares(9, 3, 4);
    let spec = ModelSpec::new(vec![3, 1], Activation::Tanh, Head::MeanSquaredError).unwrap();
    let w = ParamVector::new(vec![0.3, -0.2, 1.0, 0.1]).unwrap();
    let h = dense_hessian(&spec, &w, &ds, DENSE_HESSIAN_LIMIT).unwrap();
    let aug = Matrix::from_fn(9, 4, |i, j| if j < 3 { rows[i][j] } else { 1.0 });
    let expect = aug.transpose() * &aug * (2.0 / 9.0);
    assert!((h - expect).abs().max() <= 1e-12);
}

#[test]
fn dense_columns_are_basis_products() {
    let p = random_problem(6, 4);
    let w = ParamVector::new(p.params.clone()).unwrap();
    let h = dense_hessian(&p.spec, &w, &p.data, DENSE_HESSIAN_LIMIT).unwrap();
    for j in 0..w.len() {
        let col = full_hvp(&p.spec, &w, &p.data, &ParamVector::basis(w.len(), j)).unwrap();
        for i in 0..w.len() {
            assert_eq!(h[(i, j)].to_bits(), col.as_slice()[i].to_bits());
        }
    }
}

#[test]
fn dense_limit_is_enforced() {
    let p = random_problem(4, 6);
    let w = ParamVector::new(p.params.clone()).unwrap();
    assert!(matches!(
        dense_hessian(&p.spec, &w, &p.data, 3),
        Err(Error::HessianTooLarge { limit: 3, .. })
    ));
}

#[test]
fn chunked_hvp_matches_single_pass() {
    let n = HVP_CHUNK * 2 + 17;
    let (ds, _) = least_squares(n, 2, 9);
    let spec = ModelSpec::new(vec![2, 3, 1], Activation::Tanh, Head::MeanSquaredError).unwrap();
    let mut r = common::rng(10);
    let w = ParamVector::new((0..spec.num_params()).map(|_| common::normal(&mut r)).collect()).unwrap();
    let v = ParamVector::new((0..spec.num_params()).map(|_| common::normal(&mut r)).collect()).unwrap();
    let chunked = full_hvp(&spec, &w, &ds, &v).unwrap();
    let whole = msam_core::autodiff::hvp(&spec, &w, &msam_core::autodiff::Batch::full(&ds), &v).unwrap();
    assert!(common::rel_err(chunked.as_slice(), whole.as_slice()) <= 1e-12);
}

#[test]
fn power_iteration_matches_dense_eigensolve() {
    for seed in 0..10 {
        let p = random_problem(seed, 6);
        let w = ParamVector::new(p.params.clone()).unwrap();
        let dense = dense_hessian(&p.spec, &w, &p.data, DENSE_HESSIAN_LIMIT).unwrap();
        let truth = dominant_eigenvalue(&dense);
        let est = lambda_max_power(&p.spec, &w, &p.data, 20_000, 1e-12, seed).unwrap();
        assert!(
            (est.lambda_max - truth).abs() <= 1e-3 * truth.abs(),
            "seed {seed}: {} vs {truth}",
            est.lambda_max
        );
    }
}

#[test]
fn zero_operator_reports_zero() {
    let est = msam_core::linalg::power_iteration(|v| Ok(vec![0.0; v.len()]), 4, 10, 1e-6, 0).unwrap();
    assert_eq!(est.lambda_max, 0.0);
    assert!(est.converged);
    assert_eq!(est.iterations, 1);
}

#[test]
fn invalid_arguments() {
    let p = random_problem(2, 3);
    let w = ParamVector::new(p.params.clone()).unwrap();
    assert!(lambda_max_power(&p.spec, &w, &p.data, 0, 1e-6, 0).is_err());
    assert!(lambda_max_power(&p.spec, &w, &p.data, 10, 0.0, 0).is_err());
}
