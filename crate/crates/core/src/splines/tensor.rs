use nalgebra::{DMatrix, DVector, RowDVector};
use serde::Serialize;

use super::{constraint_nullspace, symmetrize, SmoothBasis, SplineError};

/// Full three-way tensor-product smooth built from marginal cubic
/// regression splines.
///
/// Evaluation is the row-wise Kronecker product of the marginal bases
/// (index order: margin 1 slowest, margin 3 fastest). One curvature penalty
/// per margin: `S1 (x) I (x) I`, `I (x) S2 (x) I`, `I (x) I (x) S3`. A
/// single sum-to-zero constraint over the construction data is absorbed
/// into the combined basis.
#[derive(Debug, Clone, Serialize)]
pub struct TensorBasis {
    margins: [SmoothBasis; 3],
    #[serde(serialize_with = "super::serialize_matrix")]
    constraint: DMatrix<f64>,
    #[serde(skip)]
    penalties: [DMatrix<f64>; 3],
}

impl TensorBasis {
    pub fn build(
        x1: &[f64],
        x2: &[f64],
        x3: &[f64],
        k_marginal: usize,
    ) -> Result<Self, SplineError> {
        let margins = [
            SmoothBasis::build(x1, k_marginal)?,
            SmoothBasis::build(x2, k_marginal)?,
            SmoothBasis::build(x3, k_marginal)?,
        ];
        let k = k_marginal;
        let dim = k * k * k;
        let eye = DMatrix::<f64>::identity(k, k);
        let mut penalties = [
            margins[0].penalty().kronecker(&eye).kronecker(&eye),
            eye.kronecker(margins[1].penalty()).kronecker(&eye),
            eye.kronecker(&eye).kronecker(margins[2].penalty()),
        ];
        for p in penalties.iter_mut() {
            symmetrize(p);
        }

        let mut basis = Self {
            margins,
            constraint: DMatrix::identity(dim, dim),
            penalties,
        };
        let design = basis.evaluate_matrix(x1, x2, x3);
        let col_sums = DVector::from_iterator(dim, design.column_iter().map(|c| c.sum()));
        basis.constraint = constraint_nullspace(&col_sums);
        Ok(basis)
    }

    /// Combined dimension before the constraint (`k^3`).
    pub fn dim(&self) -> usize {
        self.margins.iter().map(SmoothBasis::dim).product()
    }

    /// Dimension after absorbing the sum-to-zero constraint.
    pub fn constrained_dim(&self) -> usize {
        self.constraint.ncols()
    }

    pub fn margins(&self) -> &[SmoothBasis; 3] {
        &self.margins
    }

    /// Row-wise Kronecker product of the marginal evaluations at one point.
    pub fn evaluate(&self, x1: f64, x2: f64, x3: f64) -> RowDVector<f64> {
        let r1 = self.margins[0].evaluate(x1);
        let r2 = self.margins[1].evaluate(x2);
        let r3 = self.margins[2].evaluate(x3);
        let (k1, k2, k3) = (r1.len(), r2.len(), r3.len());
        let mut out = RowDVector::zeros(k1 * k2 * k3);
        let mut idx = 0;
        for i in 0..k1 {
            for j in 0..k2 {
                let pre = r1[i] * r2[j];
                for l in 0..k3 {
                    out[idx] = pre * r3[l];
                    idx += 1;
                }
            }
        }
        out
    }

    pub fn evaluate_matrix(&self, x1: &[f64], x2: &[f64], x3: &[f64]) -> DMatrix<f64> {
        let n = x1.len();
        let mut m = DMatrix::zeros(n, self.dim());
        for i in 0..n {
            m.row_mut(i).copy_from(&self.evaluate(x1[i], x2[i], x3[i]));
        }
        m
    }

    pub fn constrained_matrix(&self, x1: &[f64], x2: &[f64], x3: &[f64]) -> DMatrix<f64> {
        self.evaluate_matrix(x1, x2, x3) * &self.constraint
    }

    /// Marginal curvature penalties in unconstrained coordinates.
    pub fn penalties(&self) -> &[DMatrix<f64>; 3] {
        &self.penalties
    }

    /// Marginal penalties in constrained coordinates: `Z' S_m Z`.
    pub fn constrained_penalties(&self) -> [DMatrix<f64>; 3] {
        let project = |s: &DMatrix<f64>| {
            let mut p = self.constraint.transpose() * s * &self.constraint;
            symmetrize(&mut p);
            p
        };
        [
            project(&self.penalties[0]),
            project(&self.penalties[1]),
            project(&self.penalties[2]),
        ]
    }
}
