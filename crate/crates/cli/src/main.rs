//! `sbc`: estimate causal search-ad ROAS from observational media-mix
//! panels, with query summarization, scenario simulation and replicate
//! validation.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use sbc_core::dataset::{MmmPanel, PanelSchema};
use sbc_core::estimators::{
    compare_estimators, estimate_by_method, estimate_sbc_monotone_marginal, Reference, RoasMethod,
    DEFAULT_MARGINAL_DELTA,
};
use sbc_core::query;
use sbc_core::sim::{self, Scenario, ScenarioConfig};

use manifest::RunManifest;

#[derive(Parser)]
#[command(
    name = "sbc",
    version,
    about = "Causal search-ad ROAS estimation with back-door adjustment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify search queries by organic-result URL mix and build the
    /// volume series V1/V2/V3.
    Classify(ClassifyArgs),
    /// Generate a synthetic panel from a structural scenario.
    Simulate(SimulateArgs),
    /// Fit one ROAS estimator to a panel.
    Fit(FitArgs),
    /// Run several estimators and lay the results out side by side.
    Compare(CompareArgs),
    /// Replicate a scenario many times and report bias and coverage.
    Replicates(ReplicatesArgs),
}

#[derive(Args)]
struct ClassifyArgs {
    /// Query log CSV: query,url,count.
    #[arg(long)]
    log: PathBuf,
    /// Daily counts CSV: date,query,count.
    #[arg(long)]
    daily: PathBuf,
    /// Taxonomy JSON with advertiser/competitor/category domain arrays.
    #[arg(long)]
    taxonomy: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold_category: f64,
    #[arg(long, default_value_t = 0.5)]
    threshold_target: f64,
    #[arg(long, default_value_t = 0.5)]
    threshold_competitor: f64,
    #[arg(long, default_value = "sbc-out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Built-in scenario: figure2, figure3, figure4,
    /// counterexample_demand_edge, no_confounding.
    #[arg(long, conflicts_with = "config")]
    scenario: Option<String>,
    /// Scenario config JSON (as written by this command).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_days: Option<usize>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long, default_value = "sbc-out")]
    out_dir: PathBuf,
}

#[derive(Args, Clone)]
struct SchemaArgs {
    /// Panel schema JSON (column-name mapping).
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    col_date: Option<String>,
    #[arg(long)]
    col_sales: Option<String>,
    #[arg(long)]
    col_spend: Option<String>,
    #[arg(long)]
    col_v1: Option<String>,
    #[arg(long)]
    col_v2: Option<String>,
    #[arg(long)]
    col_v3: Option<String>,
    /// Comma-separated non-search channel columns.
    #[arg(long)]
    x2_cols: Option<String>,
}

impl SchemaArgs {
    fn resolve(&self) -> anyhow::Result<PanelSchema> {
        let mut schema = match &self.schema {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading schema {}", path.display()))?;
                serde_json::from_str(&text).context("parsing schema JSON")?
            }
            None => PanelSchema::default(),
        };
        if let Some(v) = &self.col_date {
            schema.date = v.clone();
        }
        if let Some(v) = &self.col_sales {
            schema.y = v.clone();
        }
        if let Some(v) = &self.col_spend {
            schema.x1 = v.clone();
        }
        if let Some(v) = &self.col_v1 {
            schema.v1 = v.clone();
        }
        if let Some(v) = &self.col_v2 {
            schema.v2 = v.clone();
        }
        if let Some(v) = &self.col_v3 {
            schema.v3 = v.clone();
        }
        if let Some(cols) = &self.x2_cols {
            for col in cols.split(',').filter(|c| !c.is_empty()) {
                schema.x2.insert(col.to_string(), col.to_string());
            }
        }
        Ok(schema)
    }
}

#[derive(Args)]
struct FitArgs {
    /// Panel CSV.
    #[arg(long)]
    panel: PathBuf,
    /// naive, demand-adjusted, sbc, sbc-tensor or sbc-monotone.
    #[arg(long)]
    method: String,
    /// Relative spend perturbation for the monotone marginal ROAS.
    #[arg(long, default_value_t = DEFAULT_MARGINAL_DELTA)]
    delta: f64,
    #[command(flatten)]
    schema: SchemaArgs,
    #[arg(long, default_value = "sbc-out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    panel: PathBuf,
    /// Comma-separated methods (default: naive,demand-adjusted,sbc,sbc-tensor).
    #[arg(long, default_value = "naive,demand-adjusted,sbc,sbc-tensor")]
    methods: String,
    /// Reference (e.g. experimental) point estimate.
    #[arg(long, requires = "reference_se")]
    reference: Option<f64>,
    #[arg(long, requires = "reference")]
    reference_se: Option<f64>,
    /// Report estimates and errors divided by the reference estimate.
    #[arg(long, requires = "reference")]
    index_to_reference: bool,
    /// Fit each calendar year separately.
    #[arg(long)]
    per_year: bool,
    #[command(flatten)]
    schema: SchemaArgs,
    #[arg(long, default_value = "sbc-out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReplicatesArgs {
    #[arg(long, conflicts_with = "config")]
    scenario: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value = "naive,demand-adjusted,sbc")]
    methods: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "sbc-out")]
    out_dir: PathBuf,
}

/// Exit codes: 0 ok, 2 input error, 3 estimation error, 4 internal error.
enum Failure {
    Input(anyhow::Error),
    Estimation(anyhow::Error),
    Internal(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Estimation(_) => 3,
            Failure::Internal(_) => 4,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Input(e) | Failure::Estimation(e) | Failure::Internal(e) => e,
        }
    }
}

fn input<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Input(e.into())
}

fn estimation<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Estimation(e.into())
}

fn internal<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Internal(e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Classify(args) => cmd_classify(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Replicates(args) => cmd_replicates(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.code())
        }
    }
}

fn ensure_out_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))
        .map_err(internal)
}

fn parse_methods(list: &str) -> Result<Vec<RoasMethod>, Failure> {
    list.split(',')
        .filter(|s| !s.is_empty())
        .map(|name| {
            RoasMethod::parse(name.trim()).ok_or_else(|| {
                input(anyhow!(
                    "unknown method `{name}`; valid methods: {}",
                    RoasMethod::all()
                        .iter()
                        .map(|m| m.as_str())
                        .collect::<Vec<_>>()
                        .join(", ")
                ))
            })
        })
        .collect()
}

fn load_panel(path: &Path, schema: &PanelSchema) -> Result<MmmPanel, Failure> {
    MmmPanel::load_csv(path, schema)
        .with_context(|| format!("loading panel {}", path.display()))
        .map_err(input)
}

fn cmd_classify(args: ClassifyArgs) -> Result<(), Failure> {
    ensure_out_dir(&args.out_dir)?;
    let taxonomy = query::UrlTaxonomy::from_json_file(&args.taxonomy)
        .with_context(|| format!("loading taxonomy {}", args.taxonomy.display()))
        .map_err(input)?;
    let log = query::load_query_log(&args.log)
        .with_context(|| format!("loading query log {}", args.log.display()))
        .map_err(input)?;
    let daily = query::load_daily_counts(&args.daily)
        .with_context(|| format!("loading daily counts {}", args.daily.display()))
        .map_err(input)?;
    let thresholds = query::Thresholds {
        category_min: args.threshold_category,
        target_min: args.threshold_target,
        competitor_min: args.threshold_competitor,
    };
    let classes = query::classify_queries(&log, &taxonomy, &thresholds).map_err(input)?;
    let panel = query::build_volume_panel(&daily, &classes).map_err(input)?;
    let scatter = query::emit_classification_scatter(&classes);

    query::save_classification_csv(&classes, &args.out_dir.join("classification.csv"))
        .map_err(internal)?;
    panel
        .save_csv(&args.out_dir.join("volume_panel.csv"))
        .map_err(internal)?;
    query::save_scatter_csv(&scatter, &args.out_dir.join("scatter.csv")).map_err(internal)?;
    if !panel.unclassified_queries.is_empty() {
        eprintln!(
            "warning: {} queries in the daily counts had no classification and were \
             treated as irrelevant",
            panel.unclassified_queries.len()
        );
    }

    let mut manifest = RunManifest::new(
        "classify",
        None,
        serde_json::json!({
            "thresholds": thresholds,
            "taxonomy": taxonomy,
        }),
    );
    for path in [&args.log, &args.daily, &args.taxonomy] {
        manifest.add_input(path).map_err(internal)?;
    }
    manifest.write(&args.out_dir).map_err(internal)?;
    println!(
        "classified {} queries ({} scatter points, {} omitted); volumes over {} days",
        classes.len(),
        scatter.points.len(),
        scatter.omitted,
        panel.dates.len()
    );
    Ok(())
}

fn resolve_scenario_config(
    scenario: &Option<String>,
    config: &Option<PathBuf>,
    seed: Option<u64>,
) -> Result<ScenarioConfig, Failure> {
    let mut resolved = match (scenario, config) {
        (Some(name), None) => {
            let scenario = Scenario::parse(name).ok_or_else(|| {
                input(anyhow!(
                    "unknown scenario `{name}`; valid: figure2, figure3, figure4, \
                     counterexample_demand_edge, no_confounding"
                ))
            })?;
            ScenarioConfig::preset(scenario, seed.unwrap_or(42))
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))
                .map_err(input)?;
            ScenarioConfig::from_json(&text).map_err(input)?
        }
        _ => {
            return Err(input(anyhow!(
                "exactly one of --scenario or --config is required"
            )))
        }
    };
    if let Some(seed) = seed {
        resolved.seed = seed;
    }
    Ok(resolved)
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Failure> {
    ensure_out_dir(&args.out_dir)?;
    let mut config = resolve_scenario_config(&args.scenario, &args.config, args.seed)?;
    if let Some(n) = args.n_days {
        config.n_days = n;
    }
    if let Some(b) = args.beta1 {
        config.beta1 = b;
    }
    let output = sim::simulate(&config).map_err(input)?;
    output
        .panel
        .save_csv(&args.out_dir.join("panel.csv"))
        .map_err(internal)?;
    let truth = serde_json::json!({
        "scenario": config.scenario.as_str(),
        "seed": config.seed,
        "gamma": output.gamma,
        "clipped_days": output.clipped_days,
        "truth": output.truth,
    });
    std::fs::write(
        args.out_dir.join("truth.json"),
        serde_json::to_string_pretty(&truth).map_err(internal)?,
    )
    .map_err(internal)?;
    output
        .dag
        .save(&args.out_dir.join("dag.txt"))
        .map_err(internal)?;

    let mut manifest = RunManifest::new(
        "simulate",
        Some(config.seed),
        serde_json::to_value(&config).map_err(internal)?,
    );
    if let Some(path) = &args.config {
        manifest.add_input(path).map_err(internal)?;
    }
    manifest.write(&args.out_dir).map_err(internal)?;
    if output.clipped_days > 0 {
        eprintln!(
            "warning: spend clipped at zero on {} of {} days",
            output.clipped_days, config.n_days
        );
    }
    println!(
        "simulated {} days of `{}` (seed {}, beta1 {}, realized gamma {:.4})",
        config.n_days,
        config.scenario.as_str(),
        config.seed,
        config.beta1,
        output.gamma
    );
    Ok(())
}

fn sanitize_term(term: &str) -> String {
    term.chars()
        .map(|c| if c.is_alphanumeric() { c } else { '_' })
        .collect::<String>()
        .trim_matches('_')
        .replace("__", "_")
}

fn cmd_fit(args: FitArgs) -> Result<(), Failure> {
    ensure_out_dir(&args.out_dir)?;
    let method = RoasMethod::parse(&args.method).ok_or_else(|| {
        input(anyhow!(
            "unknown method `{}`; valid methods: {}",
            args.method,
            RoasMethod::all()
                .iter()
                .map(|m| m.as_str())
                .collect::<Vec<_>>()
                .join(", ")
        ))
    })?;
    let schema = args.schema.resolve().map_err(input)?;
    let panel = load_panel(&args.panel, &schema)?;
    let estimate = if method == RoasMethod::SbcMonotoneMarginal {
        estimate_sbc_monotone_marginal(&panel, args.delta).map_err(estimation)?
    } else {
        estimate_by_method(&panel, method).map_err(estimation)?
    };

    std::fs::write(
        args.out_dir.join("estimate.json"),
        serde_json::to_string_pretty(&estimate).map_err(internal)?,
    )
    .map_err(internal)?;

    if let Some(fit) = &estimate.fit {
        for warning in &fit.warnings {
            eprintln!("warning: {warning}");
        }
        for curve in &fit.smooth_curves {
            let name = sanitize_term(&curve.term);
            let mut csv = String::from("x,fit,lower,upper\n");
            for i in 0..curve.x.len() {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    curve.x[i], curve.fit[i], curve.lower[i], curve.upper[i]
                ));
            }
            std::fs::write(args.out_dir.join(format!("smooth_{name}.csv")), csv)
                .map_err(internal)?;
            // Component values plus model residuals, for scatter overlays.
            let mut partial = String::from("component,partial_residual\n");
            for (f, r) in curve.data_fit.iter().zip(&fit.residuals) {
                partial.push_str(&format!("{},{}\n", f, f + r));
            }
            std::fs::write(
                args.out_dir.join(format!("partial_residuals_{name}.csv")),
                partial,
            )
            .map_err(internal)?;
        }
    }

    let mut manifest = RunManifest::new(
        "fit",
        None,
        serde_json::json!({
            "method": method.as_str(),
            "delta": args.delta,
            "schema": schema,
        }),
    );
    manifest.add_input(&args.panel).map_err(internal)?;
    manifest.write(&args.out_dir).map_err(internal)?;

    match estimate.se {
        Some(se) => println!(
            "{}: beta1 = {:.6} (se {:.6})",
            method.as_str(),
            estimate.beta1,
            se
        ),
        None => println!("{}: beta1 = {:.6} (no se)", method.as_str(), estimate.beta1),
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), Failure> {
    ensure_out_dir(&args.out_dir)?;
    let methods = parse_methods(&args.methods)?;
    let schema = args.schema.resolve().map_err(input)?;
    let panel = load_panel(&args.panel, &schema)?;
    let reference = args.reference.map(|estimate| Reference {
        estimate,
        se: args.reference_se.expect("clap enforces the pair"),
    });
    let slices: Vec<(String, MmmPanel)> = if args.per_year {
        let by_year = panel.split_by_year();
        if by_year.is_empty() {
            return Err(input(anyhow!(
                "no calendar year in the panel has enough rows to fit"
            )));
        }
        by_year
            .into_iter()
            .map(|(year, panel)| (year.to_string(), panel))
            .collect()
    } else {
        vec![("all".to_string(), panel)]
    };
    let report = compare_estimators(&slices, reference, &methods);
    for row in &report.rows {
        for (method, error) in &row.failures {
            eprintln!("warning: {method} failed on slice {}: {error}", row.slice);
        }
    }
    let text = report.render_text(args.index_to_reference);
    print!("{text}");
    std::fs::write(args.out_dir.join("comparison.txt"), &text).map_err(internal)?;
    std::fs::write(args.out_dir.join("comparison.json"), report.to_json()).map_err(internal)?;
    std::fs::write(args.out_dir.join("comparison.csv"), report.to_csv()).map_err(internal)?;

    let mut manifest = RunManifest::new(
        "compare",
        None,
        serde_json::json!({
            "methods": methods.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
            "reference": reference,
            "per_year": args.per_year,
            "index_to_reference": args.index_to_reference,
            "schema": schema,
        }),
    );
    manifest.add_input(&args.panel).map_err(internal)?;
    manifest.write(&args.out_dir).map_err(internal)?;
    Ok(())
}

fn cmd_replicates(args: ReplicatesArgs) -> Result<(), Failure> {
    ensure_out_dir(&args.out_dir)?;
    let methods = parse_methods(&args.methods)?;
    let config = resolve_scenario_config(&args.scenario, &args.config, args.seed)?;
    let study = sim::replicate_study(&config, args.reps, &methods).map_err(input)?;
    let text = study.render_text();
    print!("{text}");
    std::fs::write(args.out_dir.join("replicates.txt"), &text).map_err(internal)?;
    std::fs::write(args.out_dir.join("replicates.json"), study.to_json()).map_err(internal)?;

    let mut manifest = RunManifest::new(
        "replicates",
        Some(config.seed),
        serde_json::json!({
            "config": config,
            "reps": args.reps,
            "methods": methods.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
        }),
    );
    if let Some(path) = &args.config {
        manifest.add_input(path).map_err(internal)?;
    }
    manifest.write(&args.out_dir).map_err(internal)?;
    Ok(())
}
