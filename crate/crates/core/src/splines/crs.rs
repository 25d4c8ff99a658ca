use nalgebra::{DMatrix, DVector, RowDVector};
use serde::Serialize;

use super::{constraint_nullspace, quantile_knots, symmetrize, SplineError};

/// Cubic regression spline basis on quantile knots.
///
/// Coefficients are the function values at the knots; the fitted curve is
/// the natural interpolating cubic through them, so evaluation outside the
/// knot range extrapolates linearly. The curvature penalty
/// `S = D' B^{-1} D` satisfies `beta' S beta = integral of f''(t)^2`
/// exactly, with a two-dimensional null space spanned by linear functions.
#[derive(Debug, Clone, Serialize)]
pub struct SmoothBasis {
    knots: Vec<f64>,
    /// Maps knot values to knot second derivatives (k x k, first and last
    /// rows zero).
    #[serde(skip)]
    second_derivative_map: DMatrix<f64>,
    /// Curvature penalty, k x k.
    #[serde(serialize_with = "super::serialize_matrix")]
    penalty: DMatrix<f64>,
    /// Sum-to-zero constraint transform, k x (k-1).
    #[serde(serialize_with = "super::serialize_matrix")]
    constraint: DMatrix<f64>,
}

impl SmoothBasis {
    /// Builds a `k`-dimensional basis with knots at the evenly spaced
    /// quantiles of `x_data` (including min and max).
    pub fn build(x_data: &[f64], k: usize) -> Result<Self, SplineError> {
        if k < 3 {
            return Err(SplineError::DimensionTooSmall { min: 3, dim: k });
        }
        let knots = quantile_knots(x_data, k)?;
        Self::with_knots(knots, x_data)
    }

    fn with_knots(knots: Vec<f64>, x_data: &[f64]) -> Result<Self, SplineError> {
        let k = knots.len();
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();

        // D (k-2 x k): second-difference operator scaled by knot spacing;
        // B (k-2 x k-2): the spd tridiagonal Gram matrix of the piecewise
        // linear second-derivative representation.
        let mut d = DMatrix::zeros(k - 2, k);
        let mut b = DMatrix::zeros(k - 2, k - 2);
        for r in 0..k - 2 {
            d[(r, r)] = 1.0 / h[r];
            d[(r, r + 1)] = -1.0 / h[r] - 1.0 / h[r + 1];
            d[(r, r + 2)] = 1.0 / h[r + 1];
            b[(r, r)] = (h[r] + h[r + 1]) / 3.0;
            if r + 1 < k - 2 {
                b[(r, r + 1)] = h[r + 1] / 6.0;
                b[(r + 1, r)] = h[r + 1] / 6.0;
            }
        }
        let b_inv_d = b
            .clone()
            .cholesky()
            .ok_or(SplineError::Singular {
                context: "inverting the spline Gram matrix",
            })?
            .solve(&d);
        // Interior second derivatives; rows 0 and k-1 stay zero (natural
        // boundary conditions).
        let mut second_derivative_map = DMatrix::zeros(k, k);
        second_derivative_map
            .rows_mut(1, k - 2)
            .copy_from(&b_inv_d);
        let mut penalty = d.transpose() * &b_inv_d;
        symmetrize(&mut penalty);

        let mut basis = Self {
            knots,
            second_derivative_map,
            penalty,
            constraint: DMatrix::zeros(0, 0),
        };
        // Sum-to-zero constraint over the construction data.
        let design = basis.evaluate_matrix(x_data);
        let col_sums = DVector::from_iterator(k, design.column_iter().map(|c| c.sum()));
        basis.constraint = constraint_nullspace(&col_sums);
        Ok(basis)
    }

    pub fn dim(&self) -> usize {
        self.knots.len()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    /// The k x (k-1) transform absorbing the sum-to-zero constraint.
    pub fn constraint_transform(&self) -> &DMatrix<f64> {
        &self.constraint
    }

    /// Penalty expressed in constrained coordinates: `Z' S Z`.
    pub fn constrained_penalty(&self) -> DMatrix<f64> {
        let mut s = self.constraint.transpose() * &self.penalty * &self.constraint;
        symmetrize(&mut s);
        s
    }

    /// Evaluates the unconstrained basis at one point (length-k row).
    pub fn evaluate(&self, x: f64) -> RowDVector<f64> {
        let k = self.knots.len();
        let mut row = RowDVector::zeros(k);
        let first = self.knots[0];
        let last = self.knots[k - 1];
        if x < first {
            // Linear extrapolation from the left boundary value and slope.
            let h = self.knots[1] - first;
            row[0] = 1.0;
            let dx = x - first;
            row[0] += dx * (-1.0 / h);
            row[1] += dx * (1.0 / h);
            // Slope correction from the second derivative at knot 1.
            let f_row = self.second_derivative_map.row(1);
            for j in 0..k {
                row[j] += dx * (-h / 6.0) * f_row[j];
            }
            return row;
        }
        if x > last {
            let h = last - self.knots[k - 2];
            row[k - 1] = 1.0;
            let dx = x - last;
            row[k - 1] += dx * (1.0 / h);
            row[k - 2] += dx * (-1.0 / h);
            let f_row = self.second_derivative_map.row(k - 2);
            for j in 0..k {
                row[j] += dx * (h / 6.0) * f_row[j];
            }
            return row;
        }
        // Interval index: knots[j] <= x <= knots[j+1].
        let j = match self
            .knots
            .binary_search_by(|probe| probe.partial_cmp(&x).unwrap())
        {
            Ok(idx) => idx.min(k - 2),
            Err(idx) => idx - 1,
        };
        let h = self.knots[j + 1] - self.knots[j];
        let below = self.knots[j + 1] - x;
        let above = x - self.knots[j];
        row[j] += below / h;
        row[j + 1] += above / h;
        let c_lo = (below.powi(3) / h - h * below) / 6.0;
        let c_hi = (above.powi(3) / h - h * above) / 6.0;
        let f_lo = self.second_derivative_map.row(j);
        let f_hi = self.second_derivative_map.row(j + 1);
        for col in 0..k {
            row[col] += c_lo * f_lo[col] + c_hi * f_hi[col];
        }
        row
    }

    /// Evaluates the unconstrained basis at many points (n x k).
    pub fn evaluate_matrix(&self, xs: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(xs.len(), self.dim());
        for (i, &x) in xs.iter().enumerate() {
            m.row_mut(i).copy_from(&self.evaluate(x));
        }
        m
    }

    /// Constrained design: `evaluate_matrix(xs) * Z`.
    pub fn constrained_matrix(&self, xs: &[f64]) -> DMatrix<f64> {
        self.evaluate_matrix(xs) * &self.constraint
    }

    /// Second derivative of the fitted curve at `x` for coefficients `beta`
    /// (zero outside the knot range).
    pub fn second_derivative(&self, x: f64, beta: &DVector<f64>) -> f64 {
        let k = self.knots.len();
        if x < self.knots[0] || x > self.knots[k - 1] {
            return 0.0;
        }
        let j = match self
            .knots
            .binary_search_by(|probe| probe.partial_cmp(&x).unwrap())
        {
            Ok(idx) => idx.min(k - 2),
            Err(idx) => idx - 1,
        };
        let h = self.knots[j + 1] - self.knots[j];
        let deltas = &self.second_derivative_map * beta;
        // Piecewise-linear interpolation of knot second derivatives.
        (deltas[j] * (self.knots[j + 1] - x) + deltas[j + 1] * (x - self.knots[j])) / h
    }
}
