//! Sharpness `λ_max`: the top Hessian eigenvalue of the full-data mean loss.
//!
//! [`lambda_max_power`] runs power iteration on exact Hessian-vector products;
//! [`dense_hessian`] materializes the Hessian column by column for small
//! models so a dense eigensolver can cross-check it.
//!
//! Away from a minimum the Hessian may be indefinite, in which case power
//! iteration reports the signed eigenvalue of largest magnitude. At a
//! converged minimum the Hessian is PSD and the two notions agree.

use crate::autodiff::{hvp, Batch, ModelSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{power_iteration, Matrix};
use crate::tensor::ParamVector;

pub use crate::linalg::SharpnessEstimate;

/// Examples per Hessian-vector product chunk.
pub const HVP_CHUNK: usize = 256;

/// Default refusal limit for [`dense_hessian`].
pub const DENSE_HESSIAN_LIMIT: usize = 512;

/// Full-data `H v` as the size-weighted mean of chunk products, in ascending
/// chunk order.
pub fn full_hvp(model: &ModelSpec, params: &ParamVector, dataset: &Dataset, v: &ParamVector) -> Result<ParamVector> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if n <= HVP_CHUNK {
        return hvp(model, params, &Batch::full(dataset), v);
    }
    let mut out = ParamVector::zeros(params.len());
    let all: Vec<usize> = (0..n).collect();
    for chunk in all.chunks(HVP_CHUNK) {
        let part = hvp(model, params, &Batch::new(dataset, chunk), v)?;
        out = out.add_scaled(chunk.len() as f64 / n as f64, &part);
    }
    Ok(out)
}

pub fn lambda_max_power(
    model: &ModelSpec,
    params: &ParamVector,
    dataset: &Dataset,
    max_iters: usize,
    tol: f64,
    seed: u64,
) -> Result<SharpnessEstimate> {
    if dataset.is_empty() {
        return Err(Error::EmptyBatch);
    }
    power_iteration(
        |v| {
            let v = ParamVector::from_vec(v.to_vec());
            full_hvp(model, params, dataset, &v).map(ParamVector::into_vec)
        },
        params.len(),
        max_iters,
        tol,
        seed,
    )
}

/// Dense Hessian with column `j` equal to `H e_j`. Refuses when `d > limit`.
pub fn dense_hessian(model: &ModelSpec, params: &ParamVector, dataset: &Dataset, limit: usize) -> Result<Matrix> {
    let d = params.len();
    if d > limit {
        return Err(Error::HessianTooLarge { dim: d, limit });
    }
    let mut h = Matrix::zeros(d, d);
    for j in 0..d {
        let col = full_hvp(model, params, dataset, &ParamVector::basis(d, j))?;
        h.set_column(j, &nalgebra::DVector::from_column_slice(col.as_slice()));
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Activation, Head};

    /// One input plus bias, samples at ±sqrt(3), zero targets and a half-MSE
    /// scale: H = diag(3, 1).
    fn diag31() -> (ModelSpec, Dataset) {
        let a = 3f64.sqrt();
        let ds = Dataset::from_targets(vec![a, -a], 1, vec![0.0, 0.0], 1).unwrap();
        let m = ModelSpec::new(vec![1, 1], Activation::Relu, Head::MeanSquaredError)
            .unwrap()
            .with_loss_scale(0.5)
            .unwrap();
        (m, ds)
    }

    #[test]
    fn diagonal_quadratic() {
        let (m, ds) = diag31();
        let p = ParamVector::new(vec![0.3, -0.2]).unwrap();
        let h = dense_hessian(&m, &p, &ds, DENSE_HESSIAN_LIMIT).unwrap();
        assert!((h[(0, 0)] - 3.0).abs() < 1e-12 && (h[(1, 1)] - 1.0).abs() < 1e-12);
        assert!(h[(0, 1)].abs() < 1e-12);
        let est = lambda_max_power(&m, &p, &ds, 1000, 1e-14, 0).unwrap();
        assert!(est.converged);
        assert!((est.lambda_max - 3.0).abs() < 1e-8, "{est:?}");
    }

    #[test]
    fn refuses_large_dense() {
        let (m, ds) = diag31();
        let p = ParamVector::zeros(2);
        assert!(matches!(
            dense_hessian(&m, &p, &ds, 1),
            Err(Error::HessianTooLarge { dim: 2, limit: 1 })
        ));
    }
}
