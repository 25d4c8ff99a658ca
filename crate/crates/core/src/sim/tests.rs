use super::*;
use crate::estimators::estimate_naive;

fn quick(scenario: Scenario, seed: u64) -> ScenarioConfig {
    let mut config = ScenarioConfig::preset(scenario, seed);
    config.n_days = 150;
    config
}

#[test]
fn identical_configs_give_byte_identical_output() {
    let config = quick(Scenario::Figure2, 42);
    let a = simulate(&config).unwrap();
    let b = simulate(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    a.panel.save_csv(&pa).unwrap();
    b.panel.save_csv(&pb).unwrap();
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    let truth_a = serde_json::to_string(&a.truth).unwrap();
    let truth_b = serde_json::to_string(&b.truth).unwrap();
    assert_eq!(truth_a, truth_b);
}

#[test]
fn different_seeds_differ() {
    let a = simulate(&quick(Scenario::Figure2, 1)).unwrap();
    let b = simulate(&quick(Scenario::Figure2, 2)).unwrap();
    assert_ne!(a.panel.y, b.panel.y);
}

#[test]
fn sales_reconstruct_exactly_from_stored_pieces() {
    for scenario in [
        Scenario::Figure2,
        Scenario::Figure3,
        Scenario::Figure4,
        Scenario::CounterexampleDemandEdge,
        Scenario::NoConfounding,
    ] {
        let out = simulate(&quick(scenario, 7)).unwrap();
        let t = &out.truth;
        for i in 0..out.panel.len() {
            let rebuilt = t.beta0
                + t.beta1 * out.panel.x1[i]
                + t.f_values[i]
                + t.x2_contribution[i]
                + t.demand_direct[i]
                + t.eta[i];
            assert!(
                (rebuilt - out.panel.y[i]).abs() < 1e-10,
                "{}: day {i}",
                scenario.as_str()
            );
            // epsilon is everything except the spend effect.
            let eps = t.f_values[i] + t.x2_contribution[i] + t.demand_direct[i] + t.eta[i];
            assert!((eps - t.epsilon[i]).abs() < 1e-10);
        }
    }
}

#[test]
fn naive_slope_minus_truth_equals_realized_gamma() {
    for seed in [3, 17, 88] {
        let out = simulate(&quick(Scenario::Figure2, seed)).unwrap();
        let naive = estimate_naive(&out.panel).unwrap();
        let gamma = expected_naive_bias(&out);
        assert!(
            (naive.beta1 - out.truth.beta1 - gamma).abs() < 1e-10,
            "seed {seed}: {} vs {gamma}",
            naive.beta1 - out.truth.beta1
        );
        assert_eq!(gamma, out.gamma);
    }
}

#[test]
fn confounded_scenario_has_positive_gamma_in_nearly_all_seeds() {
    let mut positive = 0;
    for seed in 0..100 {
        let out = simulate(&quick(Scenario::Figure2, seed)).unwrap();
        if out.gamma > 0.0 {
            positive += 1;
        }
    }
    assert!(positive >= 95, "only {positive}/100 seeds had gamma > 0");
}

#[test]
fn no_confounding_scenario_has_gamma_near_zero() {
    let mut gammas = Vec::new();
    for seed in 0..40 {
        let out = simulate(&quick(Scenario::NoConfounding, seed)).unwrap();
        gammas.push(out.gamma);
    }
    let mean = crate::dataset::mean(&gammas);
    let sd = crate::dataset::sd(&gammas);
    assert!(
        mean.abs() <= 3.0 * sd / (gammas.len() as f64).sqrt(),
        "mean gamma {mean}, sd {sd}"
    );
}

#[test]
fn constructed_epsilon_bias_is_recovered() {
    // Overwrite the stored residual with 0.5 x1 + independent noise: the
    // realized gamma must concentrate near 0.5.
    use rand::SeedableRng;
    use rand_distr::Distribution;
    let mut gammas = Vec::new();
    for seed in 0..30 {
        let mut out = simulate(&quick(Scenario::NoConfounding, 1000 + seed)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let noise = rand_distr::Normal::new(0.0, 1.0).unwrap();
        out.truth.epsilon = out
            .panel
            .x1
            .iter()
            .map(|&x| 0.5 * x + noise.sample(&mut rng))
            .collect();
        gammas.push(expected_naive_bias(&out));
    }
    let mean = crate::dataset::mean(&gammas);
    let sd = crate::dataset::sd(&gammas);
    assert!(
        (mean - 0.5).abs() <= 3.0 * sd,
        "mean {mean} not within 3 sd ({sd}) of 0.5"
    );
}

#[test]
fn scenario_dags_match_backdoor_claims() {
    let fig2 = scenario_dag(&quick(Scenario::Figure2, 0));
    assert!(fig2.satisfies_backdoor("X", "Y", &["V"]).unwrap());

    let fig4 = scenario_dag(&quick(Scenario::Figure4, 0));
    assert!(fig4.satisfies_backdoor("X1", "Y", &["V"]).unwrap());

    let fig3 = scenario_dag(&quick(Scenario::Figure3, 0));
    assert!(fig3.satisfies_backdoor("X1", "Y", &["V", "X2"]).unwrap());
    // The shared budget makes query volumes alone insufficient.
    assert!(!fig3.satisfies_backdoor("X1", "Y", &["V"]).unwrap());

    let counter = scenario_dag(&quick(Scenario::CounterexampleDemandEdge, 0));
    assert!(!counter.satisfies_backdoor("X", "Y", &["V"]).unwrap());
}

#[test]
fn generated_panels_validate_and_are_nonnegative() {
    for scenario in [Scenario::Figure2, Scenario::Figure3, Scenario::Figure4] {
        let out = simulate(&quick(scenario, 5)).unwrap();
        assert!(out.panel.y.iter().all(|&v| v >= 0.0));
        assert!(out.panel.x1.iter().all(|&v| v >= 0.0));
        // Panel construction re-validates; run one more load/save loop.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        out.panel.save_csv(&path).unwrap();
        MmmPanel::load_csv(&path, &crate::dataset::PanelSchema::default()).unwrap();
    }
}

#[test]
fn budget_cap_couples_the_channels_in_figure3() {
    let mut config = quick(Scenario::Figure3, 9);
    config.n_days = 300;
    let out = simulate(&config).unwrap();
    let x2 = &out.panel.x2["nonsearch"];
    let r = crate::dataset::pearson(&out.panel.x1, x2).unwrap();
    // Joint truncation induces positive dependence beyond demand.
    let mut fig4 = config.clone();
    fig4.scenario = Scenario::Figure4;
    let out4 = simulate(&fig4).unwrap();
    let r4 = crate::dataset::pearson(&out4.panel.x1, &out4.panel.x2["nonsearch"]).unwrap();
    assert!(
        r > r4 + 0.05,
        "shared cap should couple spends: figure3 r = {r}, figure4 r = {r4}"
    );
}

#[test]
fn excessive_clipping_is_a_config_error() {
    let mut config = quick(Scenario::Figure2, 3);
    config.spend.intercept = -50.0;
    config.spend.slope_v1 = 0.0;
    match simulate(&config) {
        Err(SimError::ExcessiveClipping { .. }) => {}
        other => panic!("expected clipping error, got {other:?}"),
    }
}

#[test]
fn n_days_minimum_enforced() {
    let mut config = ScenarioConfig::preset(Scenario::Figure2, 1);
    config.n_days = 29;
    assert!(matches!(simulate(&config), Err(SimError::Config(_))));
    config.n_days = 30;
    assert!(simulate(&config).is_ok());
}

#[test]
fn config_json_round_trip() {
    let config = ScenarioConfig::preset(Scenario::Figure3, 77);
    let parsed = ScenarioConfig::from_json(&config.to_json()).unwrap();
    assert_eq!(parsed.scenario, Scenario::Figure3);
    assert_eq!(parsed.seed, 77);
    let a = simulate(&config).unwrap();
    let b = simulate(&parsed).unwrap();
    assert_eq!(a.panel.y, b.panel.y);
}

#[test]
fn replicate_smoke_run() {
    let mut config = quick(Scenario::Figure2, 11);
    config.n_days = 120;
    let study = replicate_study(&config, 2, &[RoasMethod::Naive]).unwrap();
    assert_eq!(study.n_reps, 2);
    let naive = study.summary(RoasMethod::Naive).unwrap();
    assert_eq!(naive.n_ok, 2);
    assert!(naive.coverage.is_some());
    assert!(replicate_study(&config, 1, &[RoasMethod::Naive]).is_err());
}
