use nalgebra::{DMatrix, DVector, RowDVector};
use serde::Serialize;

use super::{nnls, quantile_knots, SplineError};

/// I-spline basis of order 3 (piecewise-cubic, each function nondecreasing
/// from 0 to 1) on quantile knots.
///
/// Any nonnegative coefficient combination is monotone nondecreasing. Basis
/// functions are tail sums of the cubic B-splines on the same knots; they
/// are 0 left of the knot range and 1 right of it.
#[derive(Debug, Clone, Serialize)]
pub struct MonotoneBasis {
    /// Padded knot vector for the order-4 (cubic) B-splines.
    knots: Vec<f64>,
    dim: usize,
    lo: f64,
    hi: f64,
}

const ORDER: usize = 4; // cubic B-splines underlie order-3 I-splines

impl MonotoneBasis {
    /// `k` basis functions on knots at quantiles of `x_data`; `k >= 4`.
    pub fn build(x_data: &[f64], k: usize) -> Result<Self, SplineError> {
        if k < 4 {
            return Err(SplineError::DimensionTooSmall { min: 4, dim: k });
        }
        // k I-splines need k - 3 interior knots plus the two boundaries.
        let base = quantile_knots(x_data, k - 1)?;
        let (lo, hi) = (base[0], base[k - 2]);
        let mut knots = vec![lo; ORDER];
        knots.extend_from_slice(&base[1..k - 2]);
        knots.extend(std::iter::repeat(hi).take(ORDER));
        Ok(Self { knots, dim: k, lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    /// All cubic B-splines at `x` (there are `dim + 1` of them).
    fn bsplines(&self, x: f64) -> Vec<f64> {
        let t = &self.knots;
        let n_basis = t.len() - ORDER;
        let mut out = vec![0.0; n_basis];
        if x < self.lo || x > self.hi {
            return out;
        }
        // Index of the knot interval containing x, clamped to the last
        // nonempty interval so x = hi evaluates by continuity.
        let mut interval = n_basis - 1;
        for i in (ORDER - 1)..(t.len() - ORDER) {
            if x >= t[i] && x < t[i + 1] {
                interval = i;
                break;
            }
        }
        // Cox-de Boor triangle in place.
        let mut vals = vec![0.0; ORDER];
        vals[0] = 1.0;
        for degree in 1..ORDER {
            let mut saved = 0.0;
            for r in 0..degree {
                let left = t[interval + r + 1 - degree];
                let right = t[interval + r + 1];
                let denom = right - left;
                let term = if denom > 0.0 { vals[r] / denom } else { 0.0 };
                vals[r] = saved + (right - x) * term;
                saved = (x - left) * term;
            }
            vals[degree] = saved;
        }
        for (r, &v) in vals.iter().enumerate() {
            let idx = interval + r + 1 - ORDER;
            if idx < n_basis {
                out[idx] = v;
            }
        }
        out
    }

    /// Evaluates the I-spline basis at `x` (length-`dim` row). Values are in
    /// [0, 1]: 0 below the knot range, 1 above it.
    pub fn evaluate(&self, x: f64) -> RowDVector<f64> {
        let mut row = RowDVector::zeros(self.dim);
        if x >= self.hi {
            row.fill(1.0);
            return row;
        }
        if x < self.lo {
            return row;
        }
        let b = self.bsplines(x);
        // I_i = sum of B-splines from index i+1 onward (tail sum).
        let mut tail = 0.0;
        for i in (0..self.dim).rev() {
            tail += b[i + 1];
            row[i] = tail.clamp(0.0, 1.0);
        }
        row
    }

    pub fn evaluate_matrix(&self, xs: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(xs.len(), self.dim);
        for (i, &x) in xs.iter().enumerate() {
            m.row_mut(i).copy_from(&self.evaluate(x));
        }
        m
    }

    /// Fits a monotone nondecreasing curve `alpha + sum c_i I_i(x)` with
    /// `c_i >= 0` by nonnegative least squares; `ridge` adds a small
    /// curvature-free shrinkage on the I-spline coefficients for numerical
    /// stability (0 disables it).
    pub fn fit(&self, x: &[f64], y: &[f64], ridge: f64) -> Result<MonotoneFit, SplineError> {
        let n = x.len();
        let p = self.dim + 1;
        let extra = if ridge > 0.0 { self.dim } else { 0 };
        let mut a = DMatrix::zeros(n + extra, p);
        let mut b = DVector::zeros(n + extra);
        for i in 0..n {
            a[(i, 0)] = 1.0;
            let row = self.evaluate(x[i]);
            for j in 0..self.dim {
                a[(i, j + 1)] = row[j];
            }
            b[i] = y[i];
        }
        if ridge > 0.0 {
            let r = ridge.sqrt();
            for j in 0..self.dim {
                a[(n + j, j + 1)] = r;
            }
        }
        let mut constrained = vec![true; p];
        constrained[0] = false; // intercept is free
        let coef = nnls(&a, &b, &constrained)?;
        Ok(MonotoneFit {
            basis: self.clone(),
            intercept: coef[0],
            coefficients: coef.rows(1, self.dim).into_owned(),
        })
    }
}

/// A fitted monotone curve. Prediction extrapolates linearly outside the
/// knot range using the one-sided slope at the boundary.
#[derive(Debug, Clone, Serialize)]
pub struct MonotoneFit {
    pub basis: MonotoneBasis,
    pub intercept: f64,
    #[serde(serialize_with = "serialize_vector")]
    pub coefficients: DVector<f64>,
}

fn serialize_vector<S: serde::Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
    let vals: Vec<f64> = v.iter().copied().collect();
    serde::Serialize::serialize(&vals, s)
}

impl MonotoneFit {
    fn value_in_range(&self, x: f64) -> f64 {
        self.intercept + self.basis.evaluate(x).transpose().dot(&self.coefficients)
    }

    pub fn predict(&self, x: f64) -> f64 {
        let (lo, hi) = self.basis.range();
        let h = (hi - lo) * 1e-6;
        if x < lo {
            let slope = (self.value_in_range(lo + h) - self.value_in_range(lo)) / h;
            self.value_in_range(lo) + slope * (x - lo)
        } else if x > hi {
            let slope = (self.value_in_range(hi) - self.value_in_range(hi - h)) / h;
            self.value_in_range(hi) + slope * (x - hi)
        } else {
            self.value_in_range(x)
        }
    }
}
