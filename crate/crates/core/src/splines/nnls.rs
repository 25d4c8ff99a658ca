use nalgebra::{DMatrix, DVector};

use super::SplineError;

/// Least squares with nonnegativity constraints on a subset of variables.
///
/// Minimizes `||a x - b||^2` subject to `x[i] >= 0` for every `i` with
/// `constrained[i]`; other variables are free. Lawson-Hanson active-set
/// iteration, with free variables pinned in the passive set.
pub fn nnls(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    constrained: &[bool],
) -> Result<DVector<f64>, SplineError> {
    let p = a.ncols();
    assert_eq!(constrained.len(), p);
    let mut passive: Vec<bool> = constrained.iter().map(|c| !c).collect();
    let mut x = DVector::zeros(p);
    let tol = 1e-10 * a.amax().max(1.0) * b.amax().max(1.0);
    let max_outer = 3 * p + 30;

    // Solve the unconstrained problem restricted to the passive columns.
    let solve_passive = |passive: &[bool]| -> Result<DVector<f64>, SplineError> {
        let cols: Vec<usize> = (0..p).filter(|&j| passive[j]).collect();
        if cols.is_empty() {
            return Ok(DVector::zeros(p));
        }
        let sub = a.select_columns(cols.iter());
        let svd = sub.svd(true, true);
        let z = svd
            .solve(b, 1e-12)
            .map_err(|_| SplineError::Singular {
                context: "solving an active-set least-squares subproblem",
            })?;
        let mut full = DVector::zeros(p);
        for (slot, &j) in cols.iter().enumerate() {
            full[j] = z[slot];
        }
        Ok(full)
    };

    if passive.iter().any(|&f| f) {
        x = solve_passive(&passive)?;
        // Free-variable-only start can violate nothing: constrained vars are 0.
    }

    for _ in 0..max_outer {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..p)
            .filter(|&j| !passive[j])
            .max_by(|&i, &j| w[i].partial_cmp(&w[j]).unwrap());
        let Some(j_star) = candidate else { break };
        if w[j_star] <= tol {
            break;
        }
        passive[j_star] = true;

        loop {
            let z = solve_passive(&passive)?;
            let violating: Vec<usize> = (0..p)
                .filter(|&j| passive[j] && constrained[j] && z[j] <= 0.0)
                .collect();
            if violating.is_empty() {
                x = z;
                break;
            }
            // Step toward z until the first constrained variable hits zero.
            let mut alpha = f64::MAX;
            for &j in &violating {
                let denom = x[j] - z[j];
                if denom > 0.0 {
                    alpha = alpha.min(x[j] / denom);
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            x = &x + (z - &x) * alpha;
            for j in 0..p {
                if constrained[j] && passive[j] && x[j].abs() <= 1e-12 {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_matches_least_squares() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 4.0, 3.0]);
        let x = nnls(&a, &b, &[false, false]).unwrap();
        let normal = (a.transpose() * &a)
            .cholesky()
            .unwrap()
            .solve(&(a.transpose() * &b));
        assert!((x - normal).norm() < 1e-10);
    }

    #[test]
    fn active_constraint_clamps_to_zero() {
        // Best unconstrained slope is negative; constrained solution sets it
        // to zero and fits the intercept alone.
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let b = DVector::from_vec(vec![3.0, 2.0, 1.0]);
        let x = nnls(&a, &b, &[false, true]).unwrap();
        assert!(x[1].abs() < 1e-12);
        assert!((x[0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn interior_solution_is_untouched() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = nnls(&a, &b, &[true, true]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-10);
        assert!((x[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn residual_orthogonality_on_passive_set() {
        let a = DMatrix::from_fn(20, 5, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0);
        let b = DVector::from_fn(20, |i, _| ((i * 5) % 7) as f64 - 3.0);
        let constrained = [true, true, true, true, true];
        let x = nnls(&a, &b, &constrained).unwrap();
        let grad = a.transpose() * (&b - &a * &x);
        for j in 0..5 {
            if x[j] > 0.0 {
                assert!(grad[j].abs() < 1e-8, "active var {j} gradient {}", grad[j]);
            } else {
                assert!(grad[j] <= 1e-8, "clamped var {j} gradient {}", grad[j]);
            }
        }
    }
}
