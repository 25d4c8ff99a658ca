//! Structural simulator for the search-ad scenarios: synthetic panels with
//! known ground-truth ROAS and analytically checkable naive-estimator bias.
//!
//! Reproducibility contract: the generator is a ChaCha8 stream seeded from
//! `config.seed`; draws happen series by series in a fixed order (demand
//! innovations, v1 noise, v2 noise, v3 noise, auction noise, non-search
//! noise, sales noise), so identical configs produce byte-identical output.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::causal::{builtin_diagrams, Dag};
use crate::dataset::{DatasetError, MmmPanel};
use crate::estimators::{estimate_by_method, RoasMethod};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario config: {0}")]
    Config(String),
    #[error("negative spend clipped on {clipped} of {n} days ({rate:.1}% > 5%)")]
    ExcessiveClipping { clipped: usize, n: usize, rate: f64 },
    #[error("generated sales went negative on day {day}; rescale the config")]
    NegativeSales { day: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Figure2,
    Figure3,
    Figure4,
    CounterexampleDemandEdge,
    NoConfounding,
}

impl Scenario {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "figure2" => Some(Scenario::Figure2),
            "figure3" => Some(Scenario::Figure3),
            "figure4" => Some(Scenario::Figure4),
            "counterexample" | "counterexample_demand_edge" => {
                Some(Scenario::CounterexampleDemandEdge)
            }
            "no_confounding" => Some(Scenario::NoConfounding),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::Figure2 => "figure2",
            Scenario::Figure3 => "figure3",
            Scenario::Figure4 => "figure4",
            Scenario::CounterexampleDemandEdge => "counterexample_demand_edge",
            Scenario::NoConfounding => "no_confounding",
        }
    }
}

/// Seasonal demand: sinusoid (annual period) x day-of-week multipliers x a
/// lognormal AR(1) innovation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemandConfig {
    pub base: f64,
    pub annual_amplitude: f64,
    pub phase: f64,
    pub dow: [f64; 7],
    pub ar_rho: f64,
    pub ar_sd: f64,
}

impl Default for DemandConfig {
    fn default() -> Self {
        Self {
            base: 100.0,
            annual_amplitude: 0.3,
            phase: 0.0,
            dow: [0.95, 1.0, 1.05, 1.1, 1.05, 0.9, 0.85],
            ar_rho: 0.7,
            ar_sd: 0.15,
        }
    }
}

/// Spend rule: x1 = intercept + slope * v1
/// + interaction * standardized(v1) * standardized(v2) + auction noise,
/// clipped at 0. The interaction term (0 by default) models joint targeting
/// on the query mix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpendConfig {
    pub intercept: f64,
    pub slope_v1: f64,
    #[serde(default)]
    pub interaction: f64,
    pub noise_sd: f64,
}

impl Default for SpendConfig {
    fn default() -> Self {
        Self {
            intercept: 5.0,
            slope_v1: 0.08,
            interaction: 0.0,
            noise_sd: 2.0,
        }
    }
}

/// Non-search channel for the complex scenarios. Its sales contribution is
/// `effect * x2`, routed through the structural residual.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct X2Config {
    pub base: f64,
    pub noise_sd: f64,
    pub effect: f64,
    /// Response of the channel's spend to demand (0 keeps it budget-only).
    pub demand_coupling: f64,
}

impl Default for X2Config {
    fn default() -> Self {
        Self {
            base: 15.0,
            noise_sd: 3.0,
            effect: 1.5,
            demand_coupling: 0.0,
        }
    }
}

/// Shared periodic budget cap. In the figure3 scenario the cap binds x1 and
/// x2 jointly; figure4 caps only x2.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetConfig {
    pub period_days: usize,
    pub cap: f64,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self {
            period_days: 30,
            cap: 650.0,
        }
    }
}

/// Direct demand edges for the non-identifiable counter-example: demand
/// leaks into spend and sales without passing through the query volumes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemandEdgeConfig {
    pub spend_coupling: f64,
    pub sales_coupling: f64,
}

impl Default for DemandEdgeConfig {
    fn default() -> Self {
        Self {
            spend_coupling: 0.10,
            sales_coupling: 0.50,
        }
    }
}

/// True confounding function f(V) linking query volumes to the structural
/// residual.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FSpec {
    Zero,
    Linear { coef: [f64; 3] },
    Sqrt { coef: [f64; 3] },
    Sine { coef: [f64; 3], period: [f64; 3] },
    /// coef * standardized(v1) * standardized(v2).
    Interaction { coef: f64 },
}

impl FSpec {
    fn evaluate(&self, v1: &[f64], v2: &[f64], v3: &[f64]) -> Vec<f64> {
        let n = v1.len();
        match self {
            FSpec::Zero => vec![0.0; n],
            FSpec::Linear { coef } => (0..n)
                .map(|t| coef[0] * v1[t] + coef[1] * v2[t] + coef[2] * v3[t])
                .collect(),
            FSpec::Sqrt { coef } => (0..n)
                .map(|t| coef[0] * v1[t].sqrt() + coef[1] * v2[t].sqrt() + coef[2] * v3[t].sqrt())
                .collect(),
            FSpec::Sine { coef, period } => (0..n)
                .map(|t| {
                    coef[0] * (std::f64::consts::TAU * v1[t] / period[0]).sin()
                        + coef[1] * (std::f64::consts::TAU * v2[t] / period[1]).sin()
                        + coef[2] * (std::f64::consts::TAU * v3[t] / period[2]).sin()
                })
                .collect(),
            FSpec::Interaction { coef } => {
                let standardize = |s: &[f64]| {
                    let mean = crate::dataset::mean(s);
                    let sd = crate::dataset::sd(s).max(1e-12);
                    s.iter().map(|&v| (v - mean) / sd).collect::<Vec<f64>>()
                };
                let z1 = standardize(v1);
                let z2 = standardize(v2);
                (0..n).map(|t| coef * z1[t] * z2[t]).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub n_days: usize,
    pub start_date: NaiveDate,
    pub beta0: f64,
    pub beta1: f64,
    pub f_spec: FSpec,
    pub demand: DemandConfig,
    pub spend: SpendConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x2: Option<X2Config>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<BudgetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demand_edge: Option<DemandEdgeConfig>,
    pub v_loading: [f64; 3],
    pub v_noise_sd: [f64; 3],
    pub eta_sd: f64,
    pub seed: u64,
}

impl ScenarioConfig {
    /// Calibrated defaults per scenario: visible confounding (gamma between
    /// half and a few times beta1) with comfortably positive series.
    pub fn preset(scenario: Scenario, seed: u64) -> Self {
        let mut config = Self {
            scenario,
            n_days: 500,
            start_date: NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date"),
            beta0: 20.0,
            beta1: 2.0,
            f_spec: FSpec::Sqrt {
                coef: [8.0, 1.0, 2.0],
            },
            demand: DemandConfig::default(),
            spend: SpendConfig::default(),
            x2: None,
            budget: None,
            demand_edge: None,
            v_loading: [0.5, 0.3, 1.2],
            v_noise_sd: [0.20, 0.25, 0.15],
            eta_sd: 4.0,
            seed,
        };
        match scenario {
            Scenario::Figure2 => {}
            Scenario::Figure3 => {
                config.x2 = Some(X2Config::default());
                config.budget = Some(BudgetConfig::default());
            }
            Scenario::Figure4 => {
                config.x2 = Some(X2Config::default());
                config.budget = Some(BudgetConfig::default());
            }
            Scenario::CounterexampleDemandEdge => {
                config.demand_edge = Some(DemandEdgeConfig::default());
            }
            Scenario::NoConfounding => {
                config.f_spec = FSpec::Zero;
            }
        }
        config
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let config: ScenarioConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_days < 30 {
            return Err(SimError::Config(format!(
                "n_days must be at least 30, got {}",
                self.n_days
            )));
        }
        let mut sds = vec![
            self.demand.ar_sd,
            self.spend.noise_sd,
            self.eta_sd,
            self.v_noise_sd[0],
            self.v_noise_sd[1],
            self.v_noise_sd[2],
        ];
        if let Some(x2) = &self.x2 {
            sds.push(x2.noise_sd);
        }
        if sds.iter().any(|&s| !(s > 0.0)) {
            return Err(SimError::Config("all noise sds must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.demand.ar_rho) {
            return Err(SimError::Config(format!(
                "ar_rho must lie in [0, 1), got {}",
                self.demand.ar_rho
            )));
        }
        if self.v_loading.iter().any(|&l| l <= 0.0) {
            return Err(SimError::Config("v loadings must be positive".into()));
        }
        if let Some(b) = &self.budget {
            if b.period_days == 0 || b.cap <= 0.0 {
                return Err(SimError::Config("budget needs positive period and cap".into()));
            }
        }
        match self.scenario {
            Scenario::Figure3 | Scenario::Figure4 => {
                if self.x2.is_none() {
                    return Err(SimError::Config(format!(
                        "{} requires an x2 config",
                        self.scenario.as_str()
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Everything the generator knows: stored so that
/// `y = beta0 + beta1 x1 + f(V) + x2 contribution + direct demand + eta`
/// reconstructs exactly and the naive bias is checkable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimTruth {
    pub beta0: f64,
    pub beta1: f64,
    pub f_values: Vec<f64>,
    pub eta: Vec<f64>,
    /// y - beta0 - beta1 x1: the full structural residual.
    pub epsilon: Vec<f64>,
    pub demand: Vec<f64>,
    pub x2_contribution: Vec<f64>,
    pub demand_direct: Vec<f64>,
    /// Realized cov(x1, epsilon) / var(x1).
    pub gamma: f64,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub panel: MmmPanel,
    pub truth: SimTruth,
    pub gamma: f64,
    pub dag: Dag,
    pub clipped_days: usize,
}

/// Draws a panel from the scenario's structural equations in topological
/// order: demand, query volumes, spends, then sales.
pub fn simulate(config: &ScenarioConfig) -> Result<SimOutput, SimError> {
    config.validate()?;
    let n = config.n_days;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let standard = Normal::new(0.0, 1.0).expect("valid normal");
    let draw =
        |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> { (0..n).map(|_| standard.sample(rng)).collect() };

    // 1. Demand: seasonal sinusoid x day-of-week x lognormal AR(1).
    let demand_innovations = draw(&mut rng, n);
    let mut demand = Vec::with_capacity(n);
    let mut ar = 0.0;
    for (t, innovation) in demand_innovations.iter().enumerate() {
        ar = config.demand.ar_rho * ar + config.demand.ar_sd * innovation;
        let date = config.start_date + chrono::Duration::days(t as i64);
        let season = 1.0
            + config.demand.annual_amplitude
                * (std::f64::consts::TAU * t as f64 / 365.25 + config.demand.phase).sin();
        let dow = config.demand.dow[date.weekday().num_days_from_monday() as usize];
        demand.push(config.demand.base * season * dow * ar.exp());
    }

    // 2. Query volumes: segment loading x demand x lognormal noise.
    let mut v = [Vec::new(), Vec::new(), Vec::new()];
    for k in 0..3 {
        let noise = draw(&mut rng, n);
        v[k] = (0..n)
            .map(|t| config.v_loading[k] * demand[t] * (config.v_noise_sd[k] * noise[t]).exp())
            .collect();
    }

    // 3. Search spend: linear in v1 plus auction noise, plus the direct
    //    demand edge in the counter-example scenario.
    let auction_noise = draw(&mut rng, n);
    let spend_coupling = config.demand_edge.as_ref().map_or(0.0, |d| d.spend_coupling);
    let spend_interaction: Vec<f64> = if config.spend.interaction != 0.0 {
        let standardize = |s: &[f64]| {
            let mean = crate::dataset::mean(s);
            let sd = crate::dataset::sd(s).max(1e-12);
            s.iter().map(|&x| (x - mean) / sd).collect::<Vec<f64>>()
        };
        let z1 = standardize(&v[0]);
        let z2 = standardize(&v[1]);
        (0..n)
            .map(|t| config.spend.interaction * z1[t] * z2[t])
            .collect()
    } else {
        vec![0.0; n]
    };
    let mut x1_raw: Vec<f64> = (0..n)
        .map(|t| {
            config.spend.intercept
                + config.spend.slope_v1 * v[0][t]
                + spend_interaction[t]
                + spend_coupling * (demand[t] - config.demand.base)
                + config.spend.noise_sd * auction_noise[t]
        })
        .collect();

    // 4. Non-search spend (complex scenarios).
    let mut x2_raw: Option<Vec<f64>> = None;
    if let Some(x2_config) = &config.x2 {
        let noise = draw(&mut rng, n);
        x2_raw = Some(
            (0..n)
                .map(|t| {
                    (x2_config.base
                        * (1.0 + x2_config.demand_coupling * (demand[t] / config.demand.base - 1.0))
                        + x2_config.noise_sd * noise[t])
                        .max(0.0)
                })
                .collect(),
        );
    }

    // 5. Budget cap: shared across channels in figure3, x2-only in figure4.
    if let (Some(budget), Some(x2)) = (&config.budget, x2_raw.as_mut()) {
        let shared = config.scenario == Scenario::Figure3;
        let mut spent = 0.0;
        for t in 0..n {
            if t % budget.period_days == 0 {
                spent = 0.0;
            }
            let available = (budget.cap - spent).max(0.0);
            if shared {
                let want = x1_raw[t].max(0.0) + x2[t];
                if want > available {
                    let scale = if want > 0.0 { available / want } else { 0.0 };
                    x1_raw[t] = x1_raw[t].max(0.0) * scale;
                    x2[t] *= scale;
                }
                spent += x1_raw[t].max(0.0) + x2[t];
            } else {
                x2[t] = x2[t].min(available);
                spent += x2[t];
            }
        }
    }

    // 6. Clip spend at zero, tracking the clip rate.
    let mut clipped = 0;
    let x1: Vec<f64> = x1_raw
        .iter()
        .map(|&x| {
            if x < 0.0 {
                clipped += 1;
                0.0
            } else {
                x
            }
        })
        .collect();
    if clipped as f64 > 0.05 * n as f64 {
        return Err(SimError::ExcessiveClipping {
            clipped,
            n,
            rate: 100.0 * clipped as f64 / n as f64,
        });
    }

    // 7. Sales.
    let f_values = config.f_spec.evaluate(&v[0], &v[1], &v[2]);
    let eta_noise = draw(&mut rng, n);
    let eta: Vec<f64> = eta_noise.iter().map(|z| config.eta_sd * z).collect();
    let sales_coupling = config.demand_edge.as_ref().map_or(0.0, |d| d.sales_coupling);
    let demand_direct: Vec<f64> = demand
        .iter()
        .map(|&d| sales_coupling * (d - config.demand.base))
        .collect();
    let x2_effect = config.x2.as_ref().map_or(0.0, |c| c.effect);
    let x2_contribution: Vec<f64> = match &x2_raw {
        Some(x2) => x2.iter().map(|&s| x2_effect * s).collect(),
        None => vec![0.0; n],
    };
    let mut y = Vec::with_capacity(n);
    for t in 0..n {
        let value = config.beta0
            + config.beta1 * x1[t]
            + f_values[t]
            + x2_contribution[t]
            + demand_direct[t]
            + eta[t];
        if value < 0.0 {
            return Err(SimError::NegativeSales { day: t });
        }
        y.push(value);
    }

    let epsilon: Vec<f64> = (0..n)
        .map(|t| y[t] - config.beta0 - config.beta1 * x1[t])
        .collect();
    let gamma = centered_slope(&x1, &epsilon);

    let dates: Vec<NaiveDate> = (0..n)
        .map(|t| config.start_date + chrono::Duration::days(t as i64))
        .collect();
    let mut x2_map = BTreeMap::new();
    if let Some(x2) = x2_raw {
        x2_map.insert("nonsearch".to_string(), x2);
    }
    let panel = MmmPanel::new(
        dates,
        y,
        x1,
        x2_map,
        v[0].clone(),
        v[1].clone(),
        v[2].clone(),
    )?;

    Ok(SimOutput {
        panel,
        truth: SimTruth {
            beta0: config.beta0,
            beta1: config.beta1,
            f_values,
            eta,
            epsilon,
            demand,
            x2_contribution,
            demand_direct,
            gamma,
        },
        gamma,
        dag: scenario_dag(config),
        clipped_days: clipped,
    })
}

/// `sum (x - xbar)(e - ebar) / sum (x - xbar)^2`: the exact bias the naive
/// OLS slope picks up on these draws.
fn centered_slope(x: &[f64], e: &[f64]) -> f64 {
    let n = x.len() as f64;
    let x_mean = x.iter().sum::<f64>() / n;
    let e_mean = e.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxe = 0.0;
    for t in 0..x.len() {
        let dx = x[t] - x_mean;
        sxx += dx * dx;
        sxe += dx * (e[t] - e_mean);
    }
    sxe / sxx
}

/// Sample gamma from the stored draws.
pub fn expected_naive_bias(output: &SimOutput) -> f64 {
    centered_slope(&output.panel.x1, &output.truth.epsilon)
}

/// The DAG of the generating process, reflecting which couplings are
/// active in the config.
pub fn scenario_dag(config: &ScenarioConfig) -> Dag {
    let catalog = builtin_diagrams();
    match config.scenario {
        Scenario::Figure2 => catalog["figure2"].clone(),
        Scenario::NoConfounding => {
            // Same shape as figure2; the confounding function is zero but
            // the permitted edges are unchanged.
            catalog["figure2"].clone()
        }
        Scenario::Figure3 | Scenario::Figure4 => {
            let mut edges = vec![
                ("consumer_demand", "V"),
                ("consumer_demand", "epsilon0"),
                ("V", "auction"),
                ("V", "X1"),
                ("V", "organic_search"),
                ("auction", "X1"),
                ("organic_search", "epsilon1"),
                ("budget", "X2"),
                ("X2", "epsilon2"),
                ("epsilon0", "Y"),
                ("epsilon1", "Y"),
                ("epsilon2", "Y"),
                ("X1", "Y"),
            ];
            if config.scenario == Scenario::Figure3 {
                edges.push(("budget", "X1"));
            }
            if config.x2.as_ref().is_some_and(|c| c.demand_coupling != 0.0) {
                edges.push(("consumer_demand", "X2"));
            }
            Dag::new(
                &[
                    "consumer_demand",
                    "V",
                    "auction",
                    "organic_search",
                    "budget",
                    "X1",
                    "X2",
                    "epsilon0",
                    "epsilon1",
                    "epsilon2",
                    "Y",
                ],
                &edges,
            )
            .expect("scenario DAG is valid")
        }
        Scenario::CounterexampleDemandEdge => {
            let mut dag = Dag::new(
                &[
                    "consumer_demand",
                    "V",
                    "auction",
                    "organic_search",
                    "X",
                    "epsilon0",
                    "epsilon1",
                    "Y",
                ],
                &[
                    ("consumer_demand", "V"),
                    ("consumer_demand", "epsilon0"),
                    ("consumer_demand", "X"),
                    ("V", "auction"),
                    ("V", "X"),
                    ("V", "organic_search"),
                    ("auction", "X"),
                    ("organic_search", "epsilon1"),
                    ("epsilon0", "Y"),
                    ("epsilon1", "Y"),
                    ("X", "Y"),
                ],
            )
            .expect("counterexample DAG is valid");
            dag.add_note("demand reaches spend without passing through the query volumes");
            dag
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: RoasMethod,
    pub n_ok: usize,
    pub mean_estimate: f64,
    pub mean_bias: f64,
    pub sd: f64,
    pub rmse: f64,
    pub mean_se: Option<f64>,
    /// Fraction of replicates with truth inside the 95% interval.
    pub coverage: Option<f64>,
    pub estimates: Vec<f64>,
    pub ses: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateStudy {
    pub scenario: Scenario,
    pub n_reps: usize,
    pub true_beta1: f64,
    pub mean_gamma: f64,
    pub methods: Vec<MethodSummary>,
    /// (replicate index, error) pairs for failed replicates.
    pub failures: Vec<(usize, String)>,
}

impl ReplicateStudy {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("study serializes")
    }

    pub fn summary(&self, method: RoasMethod) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }

    /// Aligned-text bias/coverage table.
    pub fn render_text(&self) -> String {
        let mut out = format!(
            "scenario {}  reps {}  true beta1 {:.4}  mean gamma {:.4}\n",
            self.scenario.as_str(),
            self.n_reps,
            self.true_beta1,
            self.mean_gamma
        );
        out.push_str(&format!(
            "{:<14} {:>6} {:>10} {:>10} {:>10} {:>10} {:>9}\n",
            "method", "ok", "mean", "bias", "sd", "rmse", "coverage"
        ));
        for m in &self.methods {
            out.push_str(&format!(
                "{:<14} {:>6} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>9}\n",
                m.method.as_str(),
                m.n_ok,
                m.mean_estimate,
                m.mean_bias,
                m.sd,
                m.rmse,
                m.coverage
                    .map(|c| format!("{c:.3}"))
                    .unwrap_or_else(|| "--".into()),
            ));
        }
        if !self.failures.is_empty() {
            out.push_str(&format!("failed replicates: {}\n", self.failures.len()));
        }
        out
    }
}

/// Runs `n_reps` independent replicates (seeds `config.seed + i`) and
/// summarizes per-method bias, spread and coverage. Replicates where a
/// method fails are excluded from that method's summary and reported.
pub fn replicate_study(
    config: &ScenarioConfig,
    n_reps: usize,
    methods: &[RoasMethod],
) -> Result<ReplicateStudy, SimError> {
    if n_reps < 2 {
        return Err(SimError::Config(format!(
            "need at least 2 replicates, got {n_reps}"
        )));
    }
    let mut estimates: BTreeMap<RoasMethod, Vec<(f64, Option<f64>)>> =
        methods.iter().map(|&m| (m, Vec::new())).collect();
    let mut failures = Vec::new();
    let mut gammas = Vec::new();
    for i in 0..n_reps {
        let mut rep_config = config.clone();
        rep_config.seed = config.seed.wrapping_add(i as u64);
        let output = match simulate(&rep_config) {
            Ok(o) => o,
            Err(e) => {
                failures.push((i, e.to_string()));
                continue;
            }
        };
        gammas.push(output.gamma);
        for &method in methods {
            match estimate_by_method(&output.panel, method) {
                Ok(est) => estimates.get_mut(&method).unwrap().push((est.beta1, est.se)),
                Err(e) => failures.push((i, format!("{method}: {e}"))),
            }
        }
    }
    let truth = config.beta1;
    let methods_summary = methods
        .iter()
        .map(|&method| {
            let reps = &estimates[&method];
            let n_ok = reps.len();
            let mean_estimate = reps.iter().map(|(b, _)| b).sum::<f64>() / n_ok.max(1) as f64;
            let mean_bias = mean_estimate - truth;
            let sd = if n_ok > 1 {
                (reps
                    .iter()
                    .map(|(b, _)| (b - mean_estimate).powi(2))
                    .sum::<f64>()
                    / (n_ok - 1) as f64)
                    .sqrt()
            } else {
                f64::NAN
            };
            let rmse = (reps.iter().map(|(b, _)| (b - truth).powi(2)).sum::<f64>()
                / n_ok.max(1) as f64)
                .sqrt();
            let ses: Vec<Option<f64>> = reps.iter().map(|&(_, se)| se).collect();
            let with_se: Vec<(f64, f64)> = reps
                .iter()
                .filter_map(|&(b, se)| se.map(|s| (b, s)))
                .collect();
            let coverage = if with_se.is_empty() {
                None
            } else {
                Some(
                    with_se
                        .iter()
                        .filter(|(b, se)| (b - truth).abs() <= 1.96 * se)
                        .count() as f64
                        / with_se.len() as f64,
                )
            };
            let mean_se = if with_se.is_empty() {
                None
            } else {
                Some(with_se.iter().map(|(_, s)| s).sum::<f64>() / with_se.len() as f64)
            };
            MethodSummary {
                method,
                n_ok,
                mean_estimate,
                mean_bias,
                sd,
                rmse,
                mean_se,
                coverage,
                estimates: reps.iter().map(|&(b, _)| b).collect(),
                ses,
            }
        })
        .collect();
    Ok(ReplicateStudy {
        scenario: config.scenario,
        n_reps,
        true_beta1: truth,
        mean_gamma: crate::dataset::mean(&gammas),
        methods: methods_summary,
        failures,
    })
}

#[cfg(test)]
mod tests;
