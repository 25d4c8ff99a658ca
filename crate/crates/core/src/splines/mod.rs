//! Penalized spline bases: univariate cubic regression splines with exact
//! curvature penalties, tensor-product smooths, and a monotone I-spline
//! basis for shape-constrained fits.

mod crs;
mod monotone;
mod nnls;
mod tensor;

pub use crs::SmoothBasis;
pub use monotone::{MonotoneBasis, MonotoneFit};
pub use nnls::nnls;
pub use tensor::TensorBasis;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SplineError {
    #[error("need at least {needed} distinct values to build a {dim}-dimensional basis, got {distinct}")]
    InsufficientDistinctValues {
        needed: usize,
        dim: usize,
        distinct: usize,
    },
    #[error("basis dimension must be at least {min}, got {dim}")]
    DimensionTooSmall { min: usize, dim: usize },
    #[error("singular system while {context}")]
    Singular { context: &'static str },
}

/// `k` evenly spaced quantiles of the distinct values of `x`, including the
/// minimum and maximum. Strictly increasing whenever there are at least `k`
/// distinct values.
pub(crate) fn quantile_knots(x: &[f64], k: usize) -> Result<Vec<f64>, SplineError> {
    let mut distinct: Vec<f64> = x.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    if distinct.len() < k {
        return Err(SplineError::InsufficientDistinctValues {
            needed: k,
            dim: k,
            distinct: distinct.len(),
        });
    }
    let m = distinct.len();
    let mut knots = Vec::with_capacity(k);
    for i in 0..k {
        // Type-7 quantile over the distinct-value grid.
        let h = (m - 1) as f64 * i as f64 / (k - 1) as f64;
        let lo = h.floor() as usize;
        let frac = h - lo as f64;
        let q = if lo + 1 < m {
            distinct[lo] * (1.0 - frac) + distinct[lo + 1] * frac
        } else {
            distinct[m - 1]
        };
        knots.push(q);
    }
    Ok(knots)
}

/// Householder-based orthonormal basis of the orthogonal complement of `c`:
/// a k x (k-1) matrix `Z` with `c' Z = 0` and `Z' Z = I`.
pub(crate) fn constraint_nullspace(c: &DVector<f64>) -> DMatrix<f64> {
    let k = c.len();
    let norm = c.norm();
    if norm == 0.0 {
        // Degenerate constraint: drop the last column.
        return DMatrix::identity(k, k).columns(0, k - 1).into();
    }
    // Householder reflection sending c to a multiple of e_1; the remaining
    // columns of the (symmetric, orthogonal) reflector span c-perp.
    let mut v = c.clone();
    v[0] += c[0].signum() * norm;
    let vtv = v.dot(&v);
    let mut h = DMatrix::identity(k, k);
    for i in 0..k {
        for j in 0..k {
            h[(i, j)] -= 2.0 * v[i] * v[j] / vtv;
        }
    }
    h.columns(1, k - 1).into()
}

/// Symmetrizes a matrix in place: `s = (s + s') / 2`.
pub(crate) fn symmetrize(s: &mut DMatrix<f64>) {
    let st = s.transpose();
    *s += st;
    *s *= 0.5;
}

pub(crate) fn serialize_matrix<S: serde::Serializer>(
    m: &DMatrix<f64>,
    s: S,
) -> Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect();
    serde::Serialize::serialize(&rows, s)
}
