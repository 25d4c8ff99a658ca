use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::design::{penalty_decomposition, PenalizedDesign};
use super::GamError;

/// Coarse grid in log lambda, step 1 per dimension.
pub const COARSE_GRID_LO: i32 = -8;
pub const COARSE_GRID_HI: i32 = 12;
/// Hard search box for the refinement stage.
pub const LOG_LAMBDA_MIN: f64 = -12.0;
pub const LOG_LAMBDA_MAX: f64 = 16.0;
const SIMPLEX_REL_TOL: f64 = 1e-6;

/// A penalized least-squares solve at fixed smoothing parameters.
pub(crate) struct PlsSolve {
    pub beta: DVector<f64>,
    /// `||y - Z beta||^2 + beta' S_lambda beta`.
    pub rss_pen: f64,
    pub rss: f64,
    /// Upper-triangular factor with `R'R = Z'Z + S_lambda`.
    pub r: DMatrix<f64>,
}

/// Square-root rows and log pseudo-determinant of the total penalty at one
/// lambda vector: exact per single-penalty block, one pooled
/// eigendecomposition per shared (tensor) block.
pub(crate) struct PenaltyAssembly {
    /// (column offset, rows) with rows' * rows summing to S_lambda.
    pub sqrt_blocks: Vec<(usize, DMatrix<f64>)>,
    /// Sum of log positive eigenvalues of S_lambda.
    pub logdet_pos: f64,
}

pub(crate) fn assemble_penalty(
    design: &PenalizedDesign,
    lambdas: &[f64],
) -> Result<PenaltyAssembly, GamError> {
    let mut sqrt_blocks: Vec<(usize, DMatrix<f64>)> = Vec::new();
    let mut logdet_pos = 0.0;
    let mut shared: HashMap<(usize, usize), DMatrix<f64>> = HashMap::new();
    for (pb, &lam) in design.penalties.iter().zip(lambdas) {
        if lam < 0.0 {
            return Err(GamError::BadLambda(lam));
        }
        if pb.shares_block {
            let key = (pb.cols.start, pb.cols.end);
            let entry = shared
                .entry(key)
                .or_insert_with(|| DMatrix::zeros(pb.cols.len(), pb.cols.len()));
            *entry += &pb.s * lam;
        } else if lam > 0.0 {
            sqrt_blocks.push((pb.cols.start, &pb.sqrt_rows * lam.sqrt()));
            logdet_pos += pb.rank as f64 * lam.ln() + pb.logdet_pos;
        }
    }
    for ((start, _), s) in shared {
        let (_, logdet, rows) = penalty_decomposition(&s);
        sqrt_blocks.push((start, rows));
        logdet_pos += logdet;
    }
    Ok(PenaltyAssembly {
        sqrt_blocks,
        logdet_pos,
    })
}

/// Solves `min ||y - Z b||^2 + sum_j lambda_j b' S_j b` through a QR
/// factorization of the augmented system `[Z; E]` with `E'E = S_lambda`.
pub(crate) fn solve_penalized(
    design: &PenalizedDesign,
    y: &DVector<f64>,
    lambdas: &[f64],
) -> Result<PlsSolve, GamError> {
    let assembly = assemble_penalty(design, lambdas)?;
    solve_with_assembly(design, y, &assembly)
}

pub(crate) fn solve_with_assembly(
    design: &PenalizedDesign,
    y: &DVector<f64>,
    assembly: &PenaltyAssembly,
) -> Result<PlsSolve, GamError> {
    let n = design.n();
    let p = design.p();
    let sqrt_blocks = &assembly.sqrt_blocks;
    let extra: usize = sqrt_blocks.iter().map(|(_, rows)| rows.nrows()).sum();

    let mut augmented = DMatrix::zeros(n + extra, p);
    augmented.view_mut((0, 0), (n, p)).copy_from(&design.z);
    let mut row = n;
    for (start, rows) in sqrt_blocks.iter() {
        augmented
            .view_mut((row, *start), (rows.nrows(), rows.ncols()))
            .copy_from(rows);
        row += rows.nrows();
    }
    let mut rhs = DVector::zeros(n + extra);
    rhs.rows_mut(0, n).copy_from(y);

    let qr = augmented.qr();
    let r = qr.r();
    let diag_max = r.diagonal().amax();
    if r.diagonal().iter().any(|d| d.abs() <= 1e-12 * diag_max) {
        return Err(GamError::Rank {
            aliased: design.aliased_columns(),
        });
    }
    qr.q_tr_mul(&mut rhs);
    let beta = r
        .solve_upper_triangular(&rhs.rows(0, p).into_owned())
        .ok_or(GamError::Singular {
            context: "back-substitution in the penalized solve",
        })?;

    let fitted = design.z.view((0, 0), (n, p)) * &beta;
    let rss = (y - &fitted).norm_squared();
    let mut rss_pen = rss;
    for (start, rows) in sqrt_blocks {
        let seg = beta.rows(*start, rows.ncols()).into_owned();
        rss_pen += (rows * seg).norm_squared();
    }
    Ok(PlsSolve {
        beta,
        rss_pen,
        rss,
        r,
    })
}

/// The restricted-likelihood criterion minimized over log smoothing
/// parameters:
///
/// `(||y - Z b||^2 + b' S b) / sigma2 + log|Z'Z + S| - log|S|_+
///  + (n - M) log(2 pi sigma2)`,
///
/// with `sigma2 = (||y - Z b||^2 + b' S b) / (n - M)` profiled out and `M`
/// the null-space dimension of the total penalty.
pub fn reml_criterion(
    design: &PenalizedDesign,
    y: &DVector<f64>,
    log_lambdas: &[f64],
) -> Result<f64, GamError> {
    let lambdas: Vec<f64> = log_lambdas.iter().map(|l| l.exp()).collect();
    let assembly = assemble_penalty(design, &lambdas)?;
    let solve = solve_with_assembly(design, y, &assembly)?;
    let n = design.n();
    let m = design.null_dim;
    if n <= m {
        return Err(GamError::TooFewRows {
            n,
            needed: m + 1,
        });
    }
    let df = (n - m) as f64;
    let sigma2 = solve.rss_pen / df;
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(GamError::Singular {
            context: "profiling the residual variance",
        });
    }
    let logdet_a: f64 = 2.0 * solve.r.diagonal().iter().map(|d| d.abs().ln()).sum::<f64>();
    Ok(solve.rss_pen / sigma2 + logdet_a - assembly.logdet_pos
        + df * (2.0 * std::f64::consts::PI * sigma2).ln())
}

pub(crate) struct RemlOptimum {
    pub log_lambdas: Vec<f64>,
    pub criterion: f64,
    pub converged: bool,
    pub boundary_warnings: Vec<String>,
}

/// Coordinate-wise coarse grid search followed by Nelder-Mead refinement in
/// log-lambda space.
pub(crate) fn optimize_reml(
    design: &PenalizedDesign,
    y: &DVector<f64>,
) -> Result<RemlOptimum, GamError> {
    let dims = design.penalties.len();
    if dims == 0 {
        return Ok(RemlOptimum {
            log_lambdas: Vec::new(),
            criterion: reml_criterion(design, y, &[])?,
            converged: true,
            boundary_warnings: Vec::new(),
        });
    }

    // Criterion wrapper: +inf outside the box or on numeric failure keeps
    // the search inside well-behaved territory.
    let eval = |rho: &[f64]| -> f64 {
        if rho
            .iter()
            .any(|&r| !(LOG_LAMBDA_MIN..=LOG_LAMBDA_MAX).contains(&r))
        {
            return f64::INFINITY;
        }
        reml_criterion(design, y, rho).unwrap_or(f64::INFINITY)
    };

    // Coordinate sweeps over the integer grid, memoized.
    let mut memo: HashMap<Vec<i32>, f64> = HashMap::new();
    let mut grid_eval = |point: &[i32]| -> f64 {
        if let Some(&v) = memo.get(point) {
            return v;
        }
        let rho: Vec<f64> = point.iter().map(|&g| g as f64).collect();
        let v = eval(&rho);
        memo.insert(point.to_vec(), v);
        v
    };
    let mut current = vec![0i32; dims];
    for _sweep in 0..6 {
        let mut changed = false;
        for d in 0..dims {
            let mut best = current[d];
            let mut best_val = grid_eval(&current);
            for g in COARSE_GRID_LO..=COARSE_GRID_HI {
                let mut probe = current.clone();
                probe[d] = g;
                let v = grid_eval(&probe);
                if v < best_val {
                    best_val = v;
                    best = g;
                }
            }
            if best != current[d] {
                current[d] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let start: Vec<f64> = current.iter().map(|&g| g as f64).collect();

    let (point, value, converged) = nelder_mead(&eval, &start, 0.5, SIMPLEX_REL_TOL, 200 * dims + 400);

    let mut warnings = Vec::new();
    for (rho, pb) in point.iter().zip(&design.penalties) {
        if (rho - LOG_LAMBDA_MIN).abs() < 1e-3 || (rho - LOG_LAMBDA_MAX).abs() < 1e-3 {
            warnings.push(format!(
                "smoothing parameter for {} hit the search boundary (log lambda = {rho:.1})",
                pb.label
            ));
        }
    }
    Ok(RemlOptimum {
        log_lambdas: point,
        criterion: value,
        converged,
        boundary_warnings: warnings,
    })
}

/// Standard Nelder-Mead on `f`, returning the best vertex, its value and
/// whether the spread tolerance was met.
fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    start: &[f64],
    step: f64,
    rel_tol: f64,
    max_iter: usize,
) -> (Vec<f64>, f64, bool) {
    let dim = start.len();
    let mut simplex: Vec<Vec<f64>> = vec![start.to_vec()];
    for d in 0..dim {
        let mut v = start.to_vec();
        v[d] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    let order = |simplex: &mut Vec<Vec<f64>>, values: &mut Vec<f64>| {
        let mut idx: Vec<usize> = (0..values.len()).collect();
        idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        *simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        *values = idx.iter().map(|&i| values[i]).collect();
    };

    let mut converged = false;
    for _ in 0..max_iter {
        order(&mut simplex, &mut values);
        let best = values[0];
        let worst = values[dim];
        if worst.is_finite() && (worst - best).abs() <= rel_tol * (best.abs() + rel_tol) {
            converged = true;
            break;
        }
        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; dim];
        for v in &simplex[..dim] {
            for d in 0..dim {
                centroid[d] += v[d] / dim as f64;
            }
        }
        let blend = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
            a.iter().zip(b).map(|(&x, &y)| x + t * (y - x)).collect()
        };
        let reflected = blend(&centroid, &simplex[dim], -1.0);
        let f_ref = f(&reflected);
        if f_ref < values[0] {
            let expanded = blend(&centroid, &simplex[dim], -2.0);
            let f_exp = f(&expanded);
            if f_exp < f_ref {
                simplex[dim] = expanded;
                values[dim] = f_exp;
            } else {
                simplex[dim] = reflected;
                values[dim] = f_ref;
            }
        } else if f_ref < values[dim - 1] {
            simplex[dim] = reflected;
            values[dim] = f_ref;
        } else {
            let contracted = blend(&centroid, &simplex[dim], 0.5);
            let f_con = f(&contracted);
            if f_con < values[dim] {
                simplex[dim] = contracted;
                values[dim] = f_con;
            } else {
                // Shrink toward the best vertex.
                for i in 1..=dim {
                    simplex[i] = blend(&simplex[0], &simplex[i], 0.5);
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
    order(&mut simplex, &mut values);
    (simplex[0].clone(), values[0], converged)
}
