//! ROAS estimators over an observational panel: the naive OLS baseline,
//! the demand-adjusted baseline, the back-door-adjusted additive model
//! (SBC) with tensor-product and monotone-marginal variants, and the
//! two-stage full media-mix procedure.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::dataset::MmmPanel;
use crate::gam::{
    FitResult, GamError, ModelSpec, PenalizedDesign, TermKind, DEFAULT_K, DEFAULT_TENSOR_K,
};
use crate::splines::{nnls, MonotoneBasis, MonotoneFit, SplineError};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("spend series has zero variance")]
    ZeroVarianceSpend,
    #[error("spend is perfectly explained by the query-volume smooths (R^2 = {r2:.6} > 0.999)")]
    PerfectCollinearity { r2: f64 },
    #[error("tensor smooth needs at least {required} rows, got {actual}")]
    SampleSize { required: usize, actual: usize },
    #[error("marginal ROAS is undefined for all-zero spend")]
    AllZeroSpend,
    #[error("delta must lie in (0, 0.1], got {0}")]
    BadDelta(f64),
    #[error("full media-mix estimation needs at least one non-search channel")]
    MissingChannels,
    #[error(transparent)]
    Gam(#[from] GamError),
    #[error(transparent)]
    Spline(#[from] SplineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RoasMethod {
    Naive,
    DemandAdjusted,
    SbcAdditive,
    SbcTensor,
    SbcMonotoneMarginal,
}

impl RoasMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            RoasMethod::Naive => "naive",
            RoasMethod::DemandAdjusted => "demand-adjusted",
            RoasMethod::SbcAdditive => "sbc",
            RoasMethod::SbcTensor => "sbc-tensor",
            RoasMethod::SbcMonotoneMarginal => "sbc-monotone",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "naive" => Some(RoasMethod::Naive),
            "demand-adjusted" | "sa" => Some(RoasMethod::DemandAdjusted),
            "sbc" => Some(RoasMethod::SbcAdditive),
            "sbc-tensor" => Some(RoasMethod::SbcTensor),
            "sbc-monotone" => Some(RoasMethod::SbcMonotoneMarginal),
            _ => None,
        }
    }

    pub fn all() -> [RoasMethod; 5] {
        [
            RoasMethod::Naive,
            RoasMethod::DemandAdjusted,
            RoasMethod::SbcAdditive,
            RoasMethod::SbcTensor,
            RoasMethod::SbcMonotoneMarginal,
        ]
    }
}

impl std::fmt::Display for RoasMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A point estimate of the search-ad ROAS in KPI units per currency unit.
#[derive(Debug, Clone, Serialize)]
pub struct RoasEstimate {
    pub method: RoasMethod,
    pub beta1: f64,
    /// Posterior (or classical, for the naive method) standard error; the
    /// monotone-marginal variant reports none.
    pub se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitResult>,
    /// Reference point estimate used for indexed reporting, when set.
    pub index_base: Option<f64>,
}

impl RoasEstimate {
    /// Estimate and standard error divided by the reference point estimate.
    pub fn indexed(&self, reference: f64) -> (f64, Option<f64>) {
        (self.beta1 / reference, self.se.map(|s| s / reference))
    }
}

fn panel_columns(panel: &MmmPanel) -> BTreeMap<String, Vec<f64>> {
    let mut data = BTreeMap::new();
    data.insert("y".to_string(), panel.y.clone());
    data.insert("x1".to_string(), panel.x1.clone());
    data.insert("v1".to_string(), panel.v1.clone());
    data.insert("v2".to_string(), panel.v2.clone());
    data.insert("v3".to_string(), panel.v3.clone());
    for (name, series) in &panel.x2 {
        data.insert(format!("x2_{name}"), series.clone());
    }
    data
}

/// OLS of y on an intercept and spend, with the classical standard error.
pub fn estimate_naive(panel: &MmmPanel) -> Result<RoasEstimate, EstimatorError> {
    let n = panel.len() as f64;
    let x = &panel.x1;
    let y = &panel.y;
    let x_mean = x.iter().sum::<f64>() / n;
    let y_mean = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for t in 0..panel.len() {
        let dx = x[t] - x_mean;
        sxx += dx * dx;
        sxy += dx * (y[t] - y_mean);
    }
    if sxx == 0.0 {
        return Err(EstimatorError::ZeroVarianceSpend);
    }
    let beta1 = sxy / sxx;
    let beta0 = y_mean - beta1 * x_mean;
    let rss: f64 = (0..panel.len())
        .map(|t| (y[t] - beta0 - beta1 * x[t]).powi(2))
        .sum();
    let sigma2 = rss / (n - 2.0);
    let se = (sigma2 / sxx).sqrt();
    Ok(RoasEstimate {
        method: RoasMethod::Naive,
        beta1,
        se: Some(se),
        fit: None,
        index_base: None,
    })
}

/// Demand-adjusted baseline: y ~ x1 + s(S) with S the category search
/// volume. A constant proxy drops the smooth and reduces to the naive fit.
pub fn estimate_demand_adjusted(panel: &MmmPanel) -> Result<RoasEstimate, EstimatorError> {
    let mut data = panel_columns(panel);
    data.insert("s".to_string(), panel.category_volume());
    let spec = ModelSpec::new("y").with_linear("x1").with_smooth("s", DEFAULT_K);
    let fit = crate::gam::fit_reml(&spec, &data)?;
    let (beta1, se) = fit.coefficient("x1").expect("x1 is a model term");
    Ok(RoasEstimate {
        method: RoasMethod::DemandAdjusted,
        beta1,
        se: Some(se),
        fit: Some(fit),
        index_base: None,
    })
}

const COLLINEARITY_R2_MAX: f64 = 0.999;

/// R^2 of x1 regressed on the intercept plus the (constrained) smooth bases
/// of the query volumes; guards the not-perfectly-correlated precondition.
fn spend_on_volume_r2(design: &PenalizedDesign, x1: &[f64]) -> f64 {
    let n = design.n();
    let x = DVector::from_column_slice(x1);
    let x_mean = x.mean();
    let tss: f64 = x.iter().map(|&v| (v - x_mean).powi(2)).sum();
    if tss == 0.0 {
        return 1.0;
    }
    // Project x1 onto the span of all non-x1 columns by Gram-Schmidt.
    let mut residual = x.clone();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for term in &design.terms {
        if matches!(term.kind, TermKind::Linear) {
            continue;
        }
        for j in term.cols.clone() {
            let mut col = design.z.column(j).into_owned();
            for q in &basis {
                let proj = q.dot(&col);
                col -= q * proj;
            }
            let norm = col.norm();
            if norm > 1e-10 * (n as f64).sqrt() {
                basis.push(col / norm);
            }
        }
    }
    for q in &basis {
        let proj = q.dot(&residual);
        residual -= q * proj;
    }
    1.0 - residual.norm_squared() / tss
}

/// The back-door-adjusted additive estimator:
/// y ~ x1 + s(v1) + s(v2) + s(v3).
pub fn estimate_sbc(panel: &MmmPanel) -> Result<RoasEstimate, EstimatorError> {
    let data = panel_columns(panel);
    let spec = ModelSpec::new("y")
        .with_linear("x1")
        .with_smooth("v1", DEFAULT_K)
        .with_smooth("v2", DEFAULT_K)
        .with_smooth("v3", DEFAULT_K);
    let (design, _) = PenalizedDesign::build(&spec, &data)?;
    let r2 = spend_on_volume_r2(&design, &panel.x1);
    if r2 > COLLINEARITY_R2_MAX {
        return Err(EstimatorError::PerfectCollinearity { r2 });
    }
    let fit = crate::gam::fit_reml(&spec, &data)?;
    let (beta1, se) = fit.coefficient("x1").expect("x1 is a model term");
    Ok(RoasEstimate {
        method: RoasMethod::SbcAdditive,
        beta1,
        se: Some(se),
        fit: Some(fit),
        index_base: None,
    })
}

/// Additive back-door fit that also adjusts for the non-search channels:
/// y ~ x1 + s(v1) + s(v2) + s(v3) + s(x2_c) per channel. Identifies the
/// search ROAS when the channels share a budget with search (the complex
/// scenario with a budget edge into x1).
pub fn estimate_sbc_with_channel_smooths(
    panel: &MmmPanel,
) -> Result<RoasEstimate, EstimatorError> {
    if panel.x2.is_empty() {
        return Err(EstimatorError::MissingChannels);
    }
    let data = panel_columns(panel);
    let mut spec = ModelSpec::new("y")
        .with_linear("x1")
        .with_smooth("v1", DEFAULT_K)
        .with_smooth("v2", DEFAULT_K)
        .with_smooth("v3", DEFAULT_K);
    for name in panel.x2.keys() {
        spec = spec.with_smooth(&format!("x2_{name}"), DEFAULT_K);
    }
    let (design, _) = PenalizedDesign::build(&spec, &data)?;
    let r2 = spend_on_volume_r2(&design, &panel.x1);
    if r2 > COLLINEARITY_R2_MAX {
        return Err(EstimatorError::PerfectCollinearity { r2 });
    }
    let fit = crate::gam::fit_reml(&spec, &data)?;
    let (beta1, se) = fit.coefficient("x1").expect("x1 is a model term");
    Ok(RoasEstimate {
        method: RoasMethod::SbcAdditive,
        beta1,
        se: Some(se),
        fit: Some(fit),
        index_base: None,
    })
}

/// Tensor-product variant: y ~ x1 + te(v1, v2, v3). Requires
/// n >= 3 x the constrained tensor dimension.
pub fn estimate_sbc_tensor(panel: &MmmPanel) -> Result<RoasEstimate, EstimatorError> {
    let constrained_dim = DEFAULT_TENSOR_K.pow(3) - 1;
    let required = 3 * constrained_dim;
    if panel.len() < required {
        return Err(EstimatorError::SampleSize {
            required,
            actual: panel.len(),
        });
    }
    let data = panel_columns(panel);
    let spec = ModelSpec::new("y")
        .with_linear("x1")
        .with_tensor(["v1", "v2", "v3"], DEFAULT_TENSOR_K);
    let (design, _) = PenalizedDesign::build(&spec, &data)?;
    let r2 = spend_on_volume_r2(&design, &panel.x1);
    if r2 > COLLINEARITY_R2_MAX {
        return Err(EstimatorError::PerfectCollinearity { r2 });
    }
    let fit = crate::gam::fit_reml(&spec, &data)?;
    let (beta1, se) = fit.coefficient("x1").expect("x1 is a model term");
    Ok(RoasEstimate {
        method: RoasMethod::SbcTensor,
        beta1,
        se: Some(se),
        fit: Some(fit),
        index_base: None,
    })
}

pub const DEFAULT_MARGINAL_DELTA: f64 = 0.01;
const MONOTONE_K: usize = 10;

/// Finite-difference marginal ROAS of a response curve over the observed
/// spends: `sum_t (s((1+delta) x_t) - s(x_t)) / (delta sum_t x_t)`.
pub fn marginal_roas<F: Fn(f64) -> f64>(
    curve: F,
    spend: &[f64],
    delta: f64,
) -> Result<f64, EstimatorError> {
    if !(delta > 0.0 && delta <= 0.1) {
        return Err(EstimatorError::BadDelta(delta));
    }
    let total: f64 = spend.iter().sum();
    if total == 0.0 {
        return Err(EstimatorError::AllZeroSpend);
    }
    let increment: f64 = spend
        .iter()
        .map(|&x| curve((1.0 + delta) * x) - curve(x))
        .sum();
    Ok(increment / (delta * total))
}

/// Replaces the linear spend term by a monotone nondecreasing smooth and
/// reports the marginal ROAS of the fitted curve. No standard error is
/// reported for this variant.
///
/// Smoothing parameters for the query-volume terms are taken from the
/// additive fit with a linear spend term; the monotone coefficients are
/// then estimated by nonnegative penalized least squares at those values.
pub fn estimate_sbc_monotone_marginal(
    panel: &MmmPanel,
    delta: f64,
) -> Result<RoasEstimate, EstimatorError> {
    if !(delta > 0.0 && delta <= 0.1) {
        return Err(EstimatorError::BadDelta(delta));
    }
    if panel.x1.iter().sum::<f64>() == 0.0 {
        return Err(EstimatorError::AllZeroSpend);
    }
    let linear_fit = estimate_sbc(panel)?;
    let fit = linear_fit.fit.as_ref().expect("sbc carries a fit");

    let data = panel_columns(panel);
    let spec = ModelSpec::new("y")
        .with_linear("x1")
        .with_smooth("v1", DEFAULT_K)
        .with_smooth("v2", DEFAULT_K)
        .with_smooth("v3", DEFAULT_K);
    let (design, y) = PenalizedDesign::build(&spec, &data)?;
    let lambdas: BTreeMap<&str, f64> = fit
        .lambda
        .iter()
        .map(|l| (l.penalty.as_str(), l.lambda))
        .collect();

    // Assemble [1 | I-splines(x1) | smooth blocks], keeping the fitted
    // query-volume penalties as extra rows and a tiny ridge on the
    // monotone block.
    let mono = MonotoneBasis::build(&panel.x1, MONOTONE_K)?;
    let n = design.n();
    let k_mono = mono.dim();
    let smooth_terms: Vec<_> = design
        .terms
        .iter()
        .filter(|t| matches!(t.kind, TermKind::Smooth { .. }))
        .collect();
    let smooth_width: usize = smooth_terms.iter().map(|t| t.cols.len()).sum();
    let p = 1 + k_mono + smooth_width;

    let penalty_rows: usize = design
        .penalties
        .iter()
        .map(|pb| pb.sqrt_rows.nrows())
        .sum();
    let mut a = DMatrix::zeros(n + penalty_rows + k_mono, p);
    let mut b = DVector::zeros(n + penalty_rows + k_mono);
    for i in 0..n {
        a[(i, 0)] = 1.0;
        b[i] = y[i];
    }
    let mono_design = mono.evaluate_matrix(&panel.x1);
    a.view_mut((0, 1), (n, k_mono)).copy_from(&mono_design);
    let mut col = 1 + k_mono;
    let mut col_of_design: BTreeMap<usize, usize> = BTreeMap::new();
    for term in &smooth_terms {
        col_of_design.insert(term.cols.start, col);
        let width = term.cols.len();
        a.view_mut((0, col), (n, width))
            .copy_from(&design.z.view((0, term.cols.start), (n, width)));
        col += width;
    }
    let mut row = n;
    for pb in &design.penalties {
        let lam = lambdas.get(pb.label.as_str()).copied().unwrap_or(0.0);
        let new_col = col_of_design[&pb.cols.start];
        let scaled = &pb.sqrt_rows * lam.sqrt();
        a.view_mut((row, new_col), (scaled.nrows(), scaled.ncols()))
            .copy_from(&scaled);
        row += scaled.nrows();
    }
    // Ridge on the monotone block, scaled to the design.
    let gram_scale = mono_design.norm_squared() / k_mono as f64;
    let ridge = (1e-8 * gram_scale).sqrt();
    for j in 0..k_mono {
        a[(row + j, 1 + j)] = ridge;
    }

    let mut constrained = vec![false; p];
    for flag in constrained.iter_mut().skip(1).take(k_mono) {
        *flag = true;
    }
    let coef = nnls(&a, &b, &constrained)?;
    let mono_fit = MonotoneFit {
        basis: mono,
        intercept: 0.0,
        coefficients: coef.rows(1, k_mono).into_owned(),
    };
    let beta1 = marginal_roas(|x| mono_fit.predict(x), &panel.x1, delta)?;
    Ok(RoasEstimate {
        method: RoasMethod::SbcMonotoneMarginal,
        beta1,
        se: None,
        fit: None,
        index_base: None,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ChannelEffect {
    pub channel: String,
    pub coefficient: f64,
    pub se: f64,
    pub t_value: f64,
}

/// Two-stage full media-mix estimate: the search coefficient comes from the
/// bias-corrected stage, non-search channels from a second regression on
/// the residual response.
#[derive(Debug, Clone, Serialize)]
pub struct FullMmmEstimate {
    pub stage1: RoasEstimate,
    pub channels: Vec<ChannelEffect>,
    /// Stage-2 coefficients carry no bias correction; read them with the
    /// same caution as an uncorrected media-mix regression.
    pub stage2_bias_corrected: bool,
    pub stage2: FitResult,
}

/// Stage 1 estimates the search ROAS by the additive back-door fit; stage 2
/// regresses `y - beta1 x1` on the non-search channels plus the
/// query-volume smooths.
pub fn estimate_full_mmm(panel: &MmmPanel) -> Result<FullMmmEstimate, EstimatorError> {
    if panel.x2.is_empty() {
        return Err(EstimatorError::MissingChannels);
    }
    let stage1 = estimate_sbc(panel)?;
    let residual_response: Vec<f64> = panel
        .y
        .iter()
        .zip(&panel.x1)
        .map(|(&y, &x)| y - stage1.beta1 * x)
        .collect();
    let mut data = panel_columns(panel);
    data.insert("resid_y".to_string(), residual_response);
    let mut spec = ModelSpec::new("resid_y")
        .with_smooth("v1", DEFAULT_K)
        .with_smooth("v2", DEFAULT_K)
        .with_smooth("v3", DEFAULT_K);
    for name in panel.x2.keys() {
        spec = spec.with_linear(&format!("x2_{name}"));
    }
    let stage2 = crate::gam::fit_reml(&spec, &data)?;
    let channels = panel
        .x2
        .keys()
        .map(|name| {
            let (coefficient, se) = stage2
                .coefficient(&format!("x2_{name}"))
                .expect("channel is a model term");
            ChannelEffect {
                channel: name.clone(),
                coefficient,
                se,
                t_value: coefficient / se,
            }
        })
        .collect();
    Ok(FullMmmEstimate {
        stage1,
        channels,
        stage2_bias_corrected: false,
        stage2,
    })
}

/// Reference value (typically an experiment) for indexed reporting.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Reference {
    pub estimate: f64,
    pub se: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonEntry {
    pub method: RoasMethod,
    pub estimate: f64,
    pub se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub indexed_estimate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub indexed_se: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    /// Slice label: "all" or a calendar year.
    pub slice: String,
    pub entries: Vec<ComparisonEntry>,
    /// Methods that failed on this slice, with the reason.
    pub failures: Vec<(String, String)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub methods: Vec<RoasMethod>,
    pub reference: Option<Reference>,
    pub rows: Vec<ComparisonRow>,
}

pub fn estimate_by_method(
    panel: &MmmPanel,
    method: RoasMethod,
) -> Result<RoasEstimate, EstimatorError> {
    match method {
        RoasMethod::Naive => estimate_naive(panel),
        RoasMethod::DemandAdjusted => estimate_demand_adjusted(panel),
        RoasMethod::SbcAdditive => estimate_sbc(panel),
        RoasMethod::SbcTensor => estimate_sbc_tensor(panel),
        RoasMethod::SbcMonotoneMarginal => {
            estimate_sbc_monotone_marginal(panel, DEFAULT_MARGINAL_DELTA)
        }
    }
}

/// Runs the requested estimators on one or more panel slices and lays the
/// results out as an estimate-and-se table, optionally indexed by a
/// reference value.
pub fn compare_estimators(
    slices: &[(String, MmmPanel)],
    reference: Option<Reference>,
    methods: &[RoasMethod],
) -> ComparisonReport {
    let mut rows = Vec::new();
    for (label, panel) in slices {
        let mut entries = Vec::new();
        let mut failures = Vec::new();
        for &method in methods {
            match estimate_by_method(panel, method) {
                Ok(mut estimate) => {
                    let (indexed_estimate, indexed_se) = match reference {
                        Some(r) => {
                            estimate.index_base = Some(r.estimate);
                            let (e, s) = estimate.indexed(r.estimate);
                            (Some(e), s)
                        }
                        None => (None, None),
                    };
                    entries.push(ComparisonEntry {
                        method,
                        estimate: estimate.beta1,
                        se: estimate.se,
                        indexed_estimate,
                        indexed_se,
                    });
                }
                Err(e) => failures.push((method.as_str().to_string(), e.to_string())),
            }
        }
        rows.push(ComparisonRow {
            slice: label.clone(),
            entries,
            failures,
        });
    }
    ComparisonReport {
        methods: methods.to_vec(),
        reference,
        rows,
    }
}

impl ComparisonReport {
    /// Aligned-text table, one row per slice, `estimate (se)` per method;
    /// `indexed` switches to reference-indexed units (requires a reference).
    pub fn render_text(&self, indexed: bool) -> String {
        let indexed = indexed && self.reference.is_some();
        let mut header: Vec<String> = vec!["slice".into()];
        header.extend(self.methods.iter().map(|m| m.as_str().to_string()));
        if let Some(r) = self.reference {
            header.push(format!("reference ({:.3})", r.estimate));
        }
        let mut table: Vec<Vec<String>> = vec![header];
        for row in &self.rows {
            let mut cells = vec![row.slice.clone()];
            for &method in &self.methods {
                let cell = row
                    .entries
                    .iter()
                    .find(|e| e.method == method)
                    .map(|e| {
                        let (est, se) = if indexed {
                            (e.indexed_estimate.unwrap_or(e.estimate), e.indexed_se)
                        } else {
                            (e.estimate, e.se)
                        };
                        match se {
                            Some(se) => format!("{est:.3} ({se:.3})"),
                            None => format!("{est:.3} (--)"),
                        }
                    })
                    .unwrap_or_else(|| "failed".to_string());
                cells.push(cell);
            }
            if let Some(r) = self.reference {
                let cell = if indexed {
                    format!("1.000 ({:.3})", r.se / r.estimate)
                } else {
                    format!("{:.3} ({:.3})", r.estimate, r.se)
                };
                cells.push(cell);
            }
            table.push(cells);
        }
        render_aligned(&table)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("slice,method,estimate,se,indexed_estimate,indexed_se\n");
        for row in &self.rows {
            for e in &row.entries {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    row.slice,
                    e.method.as_str(),
                    e.estimate,
                    e.se.map(|v| v.to_string()).unwrap_or_default(),
                    e.indexed_estimate.map(|v| v.to_string()).unwrap_or_default(),
                    e.indexed_se.map(|v| v.to_string()).unwrap_or_default(),
                ));
            }
        }
        out
    }
}

fn render_aligned(table: &[Vec<String>]) -> String {
    let cols = table.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0usize; cols];
    for row in table {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    for row in table {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, cell)| format!("{cell:<width$}", width = widths[i]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests;
