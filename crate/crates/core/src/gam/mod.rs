//! Gaussian additive models fit by penalized least squares with
//! REML-selected smoothing parameters.
//!
//! The criterion, profiled over the residual variance, is minimized on a
//! coarse coordinate-wise grid in log lambda and refined with a
//! derivative-free simplex. Standard errors come from the Bayesian
//! posterior covariance `(Z'Z + S)^{-1} sigma2`, conditional on the
//! selected smoothing parameters.

mod design;
mod reml;

pub use design::{PenalizedDesign, PenaltyBlock, TermBlock, TermKind};
pub use reml::{reml_criterion, COARSE_GRID_HI, COARSE_GRID_LO, LOG_LAMBDA_MAX, LOG_LAMBDA_MIN};

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::splines::SplineError;

#[derive(Debug, Error)]
pub enum GamError {
    #[error("unknown series `{0}`")]
    UnknownSeries(String),
    #[error("series `{0}` has a different length than the response")]
    LengthMismatch(String),
    #[error("model needs at least one term beyond the intercept")]
    EmptyModel,
    #[error("series `{0}` appears in both the linear and smooth parts")]
    DuplicateTerm(String),
    #[error("tensor smooth `{0}` has a constant margin")]
    ConstantTensorMargin(String),
    #[error("design is rank deficient; aliased columns: {}", aliased.join(", "))]
    Rank { aliased: Vec<String> },
    #[error("need more than {needed} rows for this design, got {n}")]
    TooFewRows { n: usize, needed: usize },
    #[error("smoothing parameters must be nonnegative, got {0}")]
    BadLambda(f64),
    #[error("numerically singular system while {context}")]
    Singular { context: &'static str },
    #[error("REML refinement did not converge; best fit so far attached")]
    Convergence { best: Box<FitResult> },
    #[error(transparent)]
    Spline(#[from] SplineError),
}

/// Smooth-term configuration inside a [`ModelSpec`].
#[derive(Debug, Clone, Serialize)]
pub enum SmoothTermSpec {
    Univariate { series: String, k: usize },
    Tensor { series: [String; 3], k_marginal: usize },
}

/// Default basis dimension for univariate smooths.
pub const DEFAULT_K: usize = 10;
/// Default per-margin dimension for tensor smooths.
pub const DEFAULT_TENSOR_K: usize = 5;

/// Response, linear terms and smooth terms; the intercept is always
/// included.
#[derive(Debug, Clone, Serialize)]
pub struct ModelSpec {
    pub response: String,
    pub linear: Vec<String>,
    pub smooths: Vec<SmoothTermSpec>,
}

impl ModelSpec {
    pub fn new(response: &str) -> Self {
        Self {
            response: response.to_string(),
            linear: Vec::new(),
            smooths: Vec::new(),
        }
    }

    pub fn with_linear(mut self, series: &str) -> Self {
        self.linear.push(series.to_string());
        self
    }

    pub fn with_smooth(mut self, series: &str, k: usize) -> Self {
        self.smooths.push(SmoothTermSpec::Univariate {
            series: series.to_string(),
            k,
        });
        self
    }

    pub fn with_tensor(mut self, series: [&str; 3], k_marginal: usize) -> Self {
        self.smooths.push(SmoothTermSpec::Tensor {
            series: series.map(str::to_string),
            k_marginal,
        });
        self
    }

    pub fn validate(&self) -> Result<(), GamError> {
        if self.linear.is_empty() && self.smooths.is_empty() {
            return Err(GamError::EmptyModel);
        }
        for term in &self.smooths {
            let names: Vec<&String> = match term {
                SmoothTermSpec::Univariate { series, .. } => vec![series],
                SmoothTermSpec::Tensor { series, .. } => series.iter().collect(),
            };
            for name in names {
                if self.linear.contains(name) {
                    return Err(GamError::DuplicateTerm(name.clone()));
                }
            }
        }
        Ok(())
    }
}

/// Fitted smooth component on an evaluation grid with 95% bands, plus the
/// component's fitted values at the data points.
#[derive(Debug, Clone, Serialize)]
pub struct SmoothCurve {
    pub term: String,
    pub x: Vec<f64>,
    pub fit: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub data_fit: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TermEdf {
    pub term: String,
    pub edf: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaEstimate {
    pub penalty: String,
    pub lambda: f64,
    pub log_lambda: f64,
}

/// Results of a penalized fit: coefficients, posterior standard errors,
/// selected smoothing parameters, effective degrees of freedom, smooth
/// curves and diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub labels: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub lambda: Vec<LambdaEstimate>,
    pub sigma2: f64,
    pub edf: Vec<TermEdf>,
    /// Total effective degrees of freedom excluding the intercept.
    pub edf_total: f64,
    pub adj_r2: f64,
    pub reml: f64,
    pub n: usize,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    pub smooth_curves: Vec<SmoothCurve>,
    pub warnings: Vec<String>,
    pub dropped_terms: Vec<String>,
}

impl FitResult {
    pub fn coefficient(&self, label: &str) -> Option<(f64, f64)> {
        let idx = self.labels.iter().position(|l| l == label)?;
        Some((self.beta[idx], self.se[idx]))
    }

    pub fn term_edf(&self, term: &str) -> Option<f64> {
        self.edf.iter().find(|e| e.term == term).map(|e| e.edf)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit result serializes")
    }
}

/// Coefficients and total effective degrees of freedom of a penalized
/// least-squares fit at fixed smoothing parameters.
#[derive(Debug, Clone)]
pub struct PlsFit {
    pub beta: DVector<f64>,
    pub edf_total: f64,
    pub rss: f64,
    /// `beta' S_lambda beta`.
    pub penalty_value: f64,
}

/// Penalized least squares at fixed `lambdas` (one entry per penalty
/// block). Returns the coefficient vector and the trace of the hat-like
/// matrix `F = (Z'Z + S)^{-1} Z'Z`.
pub fn fit_pls(
    design: &PenalizedDesign,
    y: &DVector<f64>,
    lambdas: &[f64],
) -> Result<PlsFit, GamError> {
    let solve = reml::solve_penalized(design, y, lambdas)?;
    let f = hat_trace_matrix(design, &solve.r);
    Ok(PlsFit {
        edf_total: f.trace(),
        rss: solve.rss,
        penalty_value: solve.rss_pen - solve.rss,
        beta: solve.beta,
    })
}

/// `F = (Z'Z + S)^{-1} Z'Z` from the augmented factor `R`.
fn hat_trace_matrix(design: &PenalizedDesign, r: &DMatrix<f64>) -> DMatrix<f64> {
    let ztz = design.z.transpose() * &design.z;
    // F = R^{-1} R^{-T} Z'Z via two triangular solves.
    let rt_solve = r
        .transpose()
        .solve_lower_triangular(&ztz)
        .expect("R is nonsingular by construction");
    r.solve_upper_triangular(&rt_solve)
        .expect("R is nonsingular by construction")
}

/// Fits `spec` by REML over the named data columns.
pub fn fit_reml(
    spec: &ModelSpec,
    data: &BTreeMap<String, Vec<f64>>,
) -> Result<FitResult, GamError> {
    let (design, y) = PenalizedDesign::build(spec, data)?;
    let n = design.n();
    let p = design.p();
    if n <= p {
        return Err(GamError::TooFewRows { n, needed: p });
    }
    let aliased = design.aliased_columns();
    if !aliased.is_empty() {
        return Err(GamError::Rank { aliased });
    }
    let optimum = reml::optimize_reml(&design, &y)?;
    let fit = finalize_fit(&design, &y, &optimum)?;
    if optimum.converged {
        Ok(fit)
    } else {
        Err(GamError::Convergence {
            best: Box::new(fit),
        })
    }
}

fn finalize_fit(
    design: &PenalizedDesign,
    y: &DVector<f64>,
    optimum: &reml::RemlOptimum,
) -> Result<FitResult, GamError> {
    let n = design.n();
    let p = design.p();
    let lambdas: Vec<f64> = optimum.log_lambdas.iter().map(|l| l.exp()).collect();
    let solve = reml::solve_penalized(design, y, &lambdas)?;
    let m = design.null_dim;
    let sigma2 = solve.rss_pen / (n - m) as f64;

    // Posterior covariance (unscaled) and the edf matrix.
    let r_inv = solve
        .r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or(GamError::Singular {
            context: "inverting the penalized factor",
        })?;
    let v_unscaled = &r_inv * r_inv.transpose();
    let f = hat_trace_matrix(design, &solve.r);

    let se: Vec<f64> = (0..p)
        .map(|j| (v_unscaled[(j, j)] * sigma2).max(0.0).sqrt())
        .collect();

    let mut edf = Vec::new();
    let mut intercept_edf = 0.0;
    for term in &design.terms {
        let block_edf: f64 = term.cols.clone().map(|j| f[(j, j)]).sum();
        if matches!(term.kind, TermKind::Intercept) {
            intercept_edf = block_edf;
        }
        edf.push(TermEdf {
            term: term.label.clone(),
            edf: block_edf,
        });
    }
    let edf_total = f.trace() - intercept_edf;

    let fitted = &design.z * &solve.beta;
    let residuals = y - &fitted;
    let y_mean = y.mean();
    let tss: f64 = y.iter().map(|&v| (v - y_mean).powi(2)).sum();
    let adj_r2 = if tss > 0.0 && n as f64 - edf_total - 1.0 > 0.0 {
        1.0 - (solve.rss / (n as f64 - edf_total - 1.0)) / (tss / (n as f64 - 1.0))
    } else {
        f64::NAN
    };

    let smooth_curves = build_smooth_curves(design, &solve.beta, &v_unscaled, sigma2);

    let lambda = design
        .penalties
        .iter()
        .zip(&lambdas)
        .zip(&optimum.log_lambdas)
        .map(|((pb, &lambda), &log_lambda)| LambdaEstimate {
            penalty: pb.label.clone(),
            lambda,
            log_lambda,
        })
        .collect();

    Ok(FitResult {
        labels: design.labels.clone(),
        beta: solve.beta.iter().copied().collect(),
        se,
        lambda,
        sigma2,
        edf,
        edf_total,
        adj_r2,
        reml: optimum.criterion,
        n,
        fitted: fitted.iter().copied().collect(),
        residuals: residuals.iter().copied().collect(),
        smooth_curves,
        warnings: optimum.boundary_warnings.clone(),
        dropped_terms: design.dropped_terms.clone(),
    })
}

const CURVE_GRID: usize = 100;

fn build_smooth_curves(
    design: &PenalizedDesign,
    beta: &DVector<f64>,
    v_unscaled: &DMatrix<f64>,
    sigma2: f64,
) -> Vec<SmoothCurve> {
    let mut curves = Vec::new();
    for term in &design.terms {
        let TermKind::Smooth {
            basis,
            data_min,
            data_max,
        } = &term.kind
        else {
            continue;
        };
        let cols = term.cols.clone();
        let beta_block = beta.rows(cols.start, cols.len()).into_owned();
        let v_block = v_unscaled
            .view((cols.start, cols.start), (cols.len(), cols.len()))
            .into_owned();
        let xs: Vec<f64> = (0..CURVE_GRID)
            .map(|i| data_min + (data_max - data_min) * i as f64 / (CURVE_GRID - 1) as f64)
            .collect();
        let mut fit = Vec::with_capacity(xs.len());
        let mut lower = Vec::with_capacity(xs.len());
        let mut upper = Vec::with_capacity(xs.len());
        for &x in &xs {
            let row = basis.evaluate(x) * basis.constraint_transform();
            let value = (&row * &beta_block)[(0, 0)];
            let var = (&row * &v_block * row.transpose())[(0, 0)] * sigma2;
            let half = 1.96 * var.max(0.0).sqrt();
            fit.push(value);
            lower.push(value - half);
            upper.push(value + half);
        }
        let data_fit: Vec<f64> = design
            .z
            .view((0, cols.start), (design.n(), cols.len()))
            .row_iter()
            .map(|r| r.transpose().dot(&beta_block))
            .collect();
        curves.push(SmoothCurve {
            term: term.label.clone(),
            x: xs,
            fit,
            lower,
            upper,
            data_fit,
        });
    }
    curves
}
