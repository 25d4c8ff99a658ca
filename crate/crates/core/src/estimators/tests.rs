use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::sim::{simulate, FSpec, Scenario, ScenarioConfig};

fn panel_from(y: Vec<f64>, x1: Vec<f64>, v: [Vec<f64>; 3]) -> MmmPanel {
    let start = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
    let dates = (0..y.len() as i64)
        .map(|t| start + chrono::Duration::days(t))
        .collect();
    let [v1, v2, v3] = v;
    MmmPanel::new(dates, y, x1, BTreeMap::new(), v1, v2, v3).unwrap()
}

#[test]
fn naive_recovers_exact_linear_response() {
    let x: Vec<f64> = (0..20).map(|t| 1.0 + t as f64).collect();
    let y: Vec<f64> = x.iter().map(|&v| 5.0 + 2.0 * v).collect();
    let v = [vec![1.0; 20], vec![2.0; 20], vec![3.0; 20]];
    let est = estimate_naive(&panel_from(y, x, v)).unwrap();
    assert!((est.beta1 - 2.0).abs() < 1e-12);
    assert!(est.se.unwrap() < 1e-9);
}

#[test]
fn naive_matches_hand_computed_ols() {
    // x = 0..11, y as below: slope 281/143, intercept 14/39,
    // rss 4930/429, se = sqrt((rss/10)/143).
    let x: Vec<f64> = (0..12).map(|t| t as f64).collect();
    let y = vec![
        1.0, 3.0, 3.0, 7.0, 7.0, 11.0, 11.0, 15.0, 15.0, 19.0, 19.0, 23.0,
    ];
    let v = [vec![1.0; 12], vec![1.0; 12], vec![1.0; 12]];
    let est = estimate_naive(&panel_from(y, x, v)).unwrap();
    assert!((est.beta1 - 281.0 / 143.0).abs() < 1e-12);
    assert!((est.se.unwrap() - 0.0896451492915124).abs() < 1e-12);
}

#[test]
fn naive_rejects_constant_spend() {
    let y: Vec<f64> = (0..15).map(|t| t as f64).collect();
    let x = vec![3.0; 15];
    let v = [vec![1.0; 15], vec![1.0; 15], vec![1.0; 15]];
    assert!(matches!(
        estimate_naive(&panel_from(y, x, v)).unwrap_err(),
        EstimatorError::ZeroVarianceSpend
    ));
}

#[test]
fn naive_bias_on_confounded_draws_equals_gamma() {
    let out = simulate(&ScenarioConfig::preset(Scenario::Figure2, 31)).unwrap();
    let est = estimate_naive(&out.panel).unwrap();
    assert!((est.beta1 - out.truth.beta1 - out.gamma).abs() < 1e-10);
    assert!(out.gamma > 0.5, "default config should confound: {}", out.gamma);
}

#[test]
fn demand_adjusted_with_constant_proxy_reduces_to_naive() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 60;
    let x: Vec<f64> = (0..n).map(|_| 5.0 + rng.random::<f64>() * 10.0).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|&v| 3.0 + 1.5 * v + rng.random::<f64>())
        .collect();
    let v = [vec![10.0; n], vec![20.0; n], vec![5.0; n]];
    let panel = panel_from(y, x, v);
    let adjusted = estimate_demand_adjusted(&panel).unwrap();
    let naive = estimate_naive(&panel).unwrap();
    assert!((adjusted.beta1 - naive.beta1).abs() < 1e-8);
    assert!((adjusted.se.unwrap() - naive.se.unwrap()).abs() < 1e-8);
    assert_eq!(
        adjusted.fit.as_ref().unwrap().dropped_terms,
        vec!["s(s)".to_string()]
    );
}

#[test]
fn demand_adjusted_finds_null_effect_when_spend_is_demand_driven() {
    // y depends only on demand S; x1 is S plus noise. Controlling for the
    // proxy leaves no spend effect.
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let n = 300;
    let mut v1 = Vec::new();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for t in 0..n {
        let draw: f64 = noise.sample(&mut rng);
        let s = 60.0 + 25.0 * (t as f64 / 23.0).sin() + 5.0 * draw.abs();
        v1.push(s / 3.0);
        x.push(0.2 * s + 1.5 * noise.sample(&mut rng));
        y.push(10.0 + 0.8 * s + 2.0 * noise.sample(&mut rng));
    }
    let x = x.into_iter().map(|v: f64| v.max(0.0)).collect();
    let v2 = v1.clone();
    let v3 = v1.clone();
    let panel = panel_from(y, x, [v1, v2, v3]);
    let est = estimate_demand_adjusted(&panel).unwrap();
    assert!(
        est.beta1.abs() <= 2.0 * est.se.unwrap(),
        "beta1 {} se {}",
        est.beta1,
        est.se.unwrap()
    );
}

#[test]
fn sbc_recovers_truth_on_the_simple_scenario() {
    let out = simulate(&ScenarioConfig::preset(Scenario::Figure2, 42)).unwrap();
    let est = estimate_sbc(&out.panel).unwrap();
    let se = est.se.unwrap();
    assert!(
        (est.beta1 - 2.0).abs() <= 2.0 * se,
        "beta1 {} se {se}",
        est.beta1
    );
    // The naive estimate sits far above the truth on the same draws.
    let naive = estimate_naive(&out.panel).unwrap();
    assert!(naive.beta1 > 2.0 + 2.0 * naive.se.unwrap());
}

#[test]
fn sbc_and_naive_agree_without_confounding() {
    let out = simulate(&ScenarioConfig::preset(Scenario::NoConfounding, 8)).unwrap();
    let sbc = estimate_sbc(&out.panel).unwrap();
    let naive = estimate_naive(&out.panel).unwrap();
    let tol = 2.0 * sbc.se.unwrap().max(naive.se.unwrap());
    assert!(
        (sbc.beta1 - naive.beta1).abs() <= tol,
        "sbc {} naive {}",
        sbc.beta1,
        naive.beta1
    );
}

#[test]
fn sbc_target_volume_curve_is_monotone_when_generated_so() {
    // Sqrt confounding is increasing in v1, so the fitted target-favoring
    // component should be nondecreasing over the central 90% of its range.
    let out = simulate(&ScenarioConfig::preset(Scenario::Figure2, 23)).unwrap();
    let est = estimate_sbc(&out.panel).unwrap();
    let fit = est.fit.as_ref().unwrap();
    let curve = fit
        .smooth_curves
        .iter()
        .find(|c| c.term == "s(v1)")
        .unwrap();
    let m = curve.x.len();
    let lo = m / 20;
    let hi = m - m / 20;
    let range = curve.fit.iter().cloned().fold(f64::MIN, f64::max)
        - curve.fit.iter().cloned().fold(f64::MAX, f64::min);
    for i in lo..hi - 1 {
        assert!(
            curve.fit[i + 1] >= curve.fit[i] - 1e-3 * range,
            "curve decreases at grid point {i}"
        );
    }
}

#[test]
fn sbc_rejects_spend_perfectly_explained_by_volumes() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 120;
    let v1: Vec<f64> = (0..n).map(|_| 10.0 + rng.random::<f64>() * 40.0).collect();
    let v2: Vec<f64> = (0..n).map(|_| 5.0 + rng.random::<f64>() * 20.0).collect();
    let v3: Vec<f64> = (0..n).map(|_| 20.0 + rng.random::<f64>() * 60.0).collect();
    let x: Vec<f64> = v1.iter().map(|&v| 2.0 + 0.4 * v).collect();
    let y: Vec<f64> = (0..n).map(|t| 30.0 + x[t] + rng.random::<f64>()).collect();
    let panel = panel_from(y, x, [v1, v2, v3]);
    match estimate_sbc(&panel) {
        Err(EstimatorError::PerfectCollinearity { r2 }) => assert!(r2 > 0.999),
        other => panic!("expected collinearity rejection, got {other:?}"),
    }
}

#[test]
fn sbc_with_constant_secondary_volumes_matches_reduced_model() {
    let out = simulate(&ScenarioConfig::preset(Scenario::Figure2, 19)).unwrap();
    let mut panel = out.panel.clone();
    panel.v2 = vec![7.0; panel.len()];
    panel.v3 = vec![11.0; panel.len()];
    let est = estimate_sbc(&panel).unwrap();
    assert_eq!(
        est.fit.as_ref().unwrap().dropped_terms,
        vec!["s(v2)".to_string(), "s(v3)".to_string()]
    );
    // Same fit as the explicit y ~ x1 + s(v1) model.
    let mut data = BTreeMap::new();
    data.insert("y".to_string(), panel.y.clone());
    data.insert("x1".to_string(), panel.x1.clone());
    data.insert("v1".to_string(), panel.v1.clone());
    let reduced = crate::gam::fit_reml(
        &ModelSpec::new("y").with_linear("x1").with_smooth("v1", 10),
        &data,
    )
    .unwrap();
    let (b_red, _) = reduced.coefficient("x1").unwrap();
    assert!((est.beta1 - b_red).abs() < 1e-6);
}

#[test]
fn tensor_requires_a_large_sample() {
    let mut config = ScenarioConfig::preset(Scenario::Figure2, 3);
    config.n_days = 60;
    let out = simulate(&config).unwrap();
    match estimate_sbc_tensor(&out.panel) {
        Err(EstimatorError::SampleSize { required, actual }) => {
            assert_eq!(required, 372);
            assert_eq!(actual, 60);
        }
        other => panic!("expected sample-size rejection, got {other:?}"),
    }
}

#[test]
fn tensor_agrees_with_additive_fit_on_additive_truth() {
    let mut config = ScenarioConfig::preset(Scenario::Figure2, 5);
    config.n_days = 1000;
    let out = simulate(&config).unwrap();
    let additive = estimate_sbc(&out.panel).unwrap();
    let tensor = estimate_sbc_tensor(&out.panel).unwrap();
    let tol = 2.0 * tensor.se.unwrap().max(additive.se.unwrap());
    assert!(
        (tensor.beta1 - additive.beta1).abs() <= tol,
        "tensor {} additive {} tol {tol}",
        tensor.beta1,
        additive.beta1
    );
}

fn interaction_config(seed: u64) -> ScenarioConfig {
    // Confounding through the volume interaction, with spend also targeting
    // the joint mix so the additive approximation leaves residual bias.
    let mut config = ScenarioConfig::preset(Scenario::Figure2, seed);
    config.n_days = 1000;
    config.beta0 = 200.0;
    config.f_spec = FSpec::Interaction { coef: 10.0 };
    config.spend.interaction = 1.5;
    config
}

#[test]
fn tensor_handles_interaction_truth_where_additive_fails() {
    let out = simulate(&interaction_config(71)).unwrap();
    let tensor = estimate_sbc_tensor(&out.panel).unwrap();
    assert!(
        (tensor.beta1 - 2.0).abs() <= 2.0 * tensor.se.unwrap(),
        "tensor {} se {}",
        tensor.beta1,
        tensor.se.unwrap()
    );
    // The additive approximation misses the interaction in most replicates.
    let mut biased = 0;
    let reps = 100;
    for i in 0..reps {
        let mut rep = interaction_config(1000 + i);
        rep.seed = 1000 + i;
        let out = simulate(&rep).unwrap();
        let additive = estimate_sbc(&out.panel).unwrap();
        if (additive.beta1 - 2.0).abs() > 2.0 * additive.se.unwrap() {
            biased += 1;
        }
    }
    assert!(
        2 * biased >= reps,
        "additive fit flagged biased in only {biased}/{reps} replicates"
    );
}

#[test]
fn marginal_roas_is_exact_on_linear_curves() {
    let spend: Vec<f64> = (1..=40).map(|t| t as f64 * 0.7).collect();
    for delta in [0.001, 0.01, 0.1] {
        let value = marginal_roas(|x| 4.25 * x, &spend, delta).unwrap();
        assert!((value - 4.25).abs() < 1e-10, "delta {delta}: {value}");
    }
}

#[test]
fn marginal_roas_matches_closed_form_on_sqrt_curve() {
    let spend: Vec<f64> = (1..=50).map(|t| 0.5 + t as f64 * 0.3).collect();
    let delta = 0.01;
    let value = marginal_roas(|x| x.sqrt(), &spend, delta).unwrap();
    let expected: f64 = spend
        .iter()
        .map(|&x| (1.01 * x).sqrt() - x.sqrt())
        .sum::<f64>()
        / (0.01 * spend.iter().sum::<f64>());
    assert!((value - expected).abs() < 1e-6, "{value} vs {expected}");
}

#[test]
fn marginal_roas_input_validation() {
    let spend = vec![1.0, 2.0];
    assert!(matches!(
        marginal_roas(|x| x, &spend, 0.0).unwrap_err(),
        EstimatorError::BadDelta(_)
    ));
    assert!(matches!(
        marginal_roas(|x| x, &spend, 0.2).unwrap_err(),
        EstimatorError::BadDelta(_)
    ));
    assert!(matches!(
        marginal_roas(|x| x, &[0.0, 0.0], 0.01).unwrap_err(),
        EstimatorError::AllZeroSpend
    ));
}

#[test]
fn monotone_marginal_tracks_the_additive_estimate_on_linear_truth() {
    let out = simulate(&ScenarioConfig::preset(Scenario::Figure2, 13)).unwrap();
    let additive = estimate_sbc(&out.panel).unwrap();
    let marginal = estimate_sbc_monotone_marginal(&out.panel, DEFAULT_MARGINAL_DELTA).unwrap();
    assert!(marginal.se.is_none());
    let rel = (marginal.beta1 - additive.beta1).abs() / additive.beta1.abs();
    assert!(
        rel <= 0.10,
        "monotone {} vs additive {} (rel {rel})",
        marginal.beta1,
        additive.beta1
    );
}

#[test]
fn full_mmm_flags_null_channel_effects_as_insignificant() {
    let mut config = ScenarioConfig::preset(Scenario::Figure4, 29);
    config.x2.as_mut().unwrap().effect = 0.0;
    let out = simulate(&config).unwrap();
    let full = estimate_full_mmm(&out.panel).unwrap();
    assert!(!full.stage2_bias_corrected);
    for channel in &full.channels {
        assert!(
            channel.t_value.abs() < 2.0,
            "{}: t = {}",
            channel.channel,
            channel.t_value
        );
    }
}

#[test]
fn full_mmm_stage1_covers_truth_with_active_nonsearch_channel() {
    let out = simulate(&ScenarioConfig::preset(Scenario::Figure4, 37)).unwrap();
    let full = estimate_full_mmm(&out.panel).unwrap();
    let se = full.stage1.se.unwrap();
    assert!(
        (full.stage1.beta1 - 2.0).abs() <= 2.0 * se,
        "stage1 {} se {se}",
        full.stage1.beta1
    );
    // Stage-2 residual response identity.
    let first = out.panel.y[0] - full.stage1.beta1 * out.panel.x1[0];
    let refit = full.stage2.fitted[0] + full.stage2.residuals[0];
    assert!((first - refit).abs() < 1e-10);
    // The channel's effect is real and stage 2 sees it.
    assert!(full.channels[0].coefficient > 0.0);
}

#[test]
fn full_mmm_requires_channels() {
    let out = simulate(&ScenarioConfig::preset(Scenario::Figure2, 2)).unwrap();
    assert!(matches!(
        estimate_full_mmm(&out.panel).unwrap_err(),
        EstimatorError::MissingChannels
    ));
}

#[test]
fn channel_smooth_fit_identifies_beta1_under_shared_budget() {
    // Shared budget couples spends; adjusting for the non-search channel
    // alongside the query volumes restores identification.
    let out = simulate(&ScenarioConfig::preset(Scenario::Figure3, 41)).unwrap();
    let est = estimate_sbc_with_channel_smooths(&out.panel).unwrap();
    let se = est.se.unwrap();
    assert!(
        (est.beta1 - 2.0).abs() <= 2.0 * se,
        "beta1 {} se {se}",
        est.beta1
    );
}

#[test]
fn indexing_definition() {
    let est = RoasEstimate {
        method: RoasMethod::Naive,
        beta1: 6.0,
        se: Some(1.5),
        fit: None,
        index_base: None,
    };
    let (e, s) = est.indexed(3.0);
    assert_eq!(e, 2.0);
    assert_eq!(s, Some(0.5));
}

#[test]
fn comparison_report_shape_and_indexing() {
    let out = simulate(&ScenarioConfig::preset(Scenario::Figure2, 55)).unwrap();
    let methods = [
        RoasMethod::Naive,
        RoasMethod::DemandAdjusted,
        RoasMethod::SbcAdditive,
        RoasMethod::SbcTensor,
    ];
    let reference = Some(Reference {
        estimate: 2.0,
        se: 0.2,
    });
    let report = compare_estimators(
        &[("all".to_string(), out.panel.clone())],
        reference,
        &methods,
    );
    let row = &report.rows[0];
    assert_eq!(row.entries.len(), 4);
    let naive = row
        .entries
        .iter()
        .find(|e| e.method == RoasMethod::Naive)
        .unwrap();
    let sbc = row
        .entries
        .iter()
        .find(|e| e.method == RoasMethod::SbcAdditive)
        .unwrap();
    // Truth as reference: SBC indexes near 1, the naive estimate well above.
    assert!(naive.indexed_estimate.unwrap() > 1.2);
    assert!((sbc.indexed_estimate.unwrap() - 1.0).abs() < 0.25);
    let text = report.render_text(true);
    assert!(text.contains("naive") && text.contains("sbc"));
    assert!(text.contains("reference"));
    // Machine-readable outputs parse.
    let parsed: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    assert!(parsed["rows"].is_array());
    assert!(report.to_csv().lines().count() > 4);
}

#[test]
fn currency_and_kpi_unit_invariance() {
    let out = simulate(&ScenarioConfig::preset(Scenario::Figure2, 61)).unwrap();
    let base_naive = estimate_naive(&out.panel).unwrap();
    let base_sbc = estimate_sbc(&out.panel).unwrap();

    // Spend rescaled by c divides estimates by c.
    let c = 4.0;
    let mut scaled = out.panel.clone();
    for v in scaled.x1.iter_mut() {
        *v *= c;
    }
    let naive = estimate_naive(&scaled).unwrap();
    assert!((naive.beta1 * c - base_naive.beta1).abs() < 1e-10);
    assert!((naive.se.unwrap() * c - base_naive.se.unwrap()).abs() < 1e-10);
    let sbc = estimate_sbc(&scaled).unwrap();
    assert!(
        (sbc.beta1 * c - base_sbc.beta1).abs() <= 1e-4 * base_sbc.beta1.abs(),
        "{} vs {}",
        sbc.beta1 * c,
        base_sbc.beta1
    );

    // KPI rescaled by c multiplies estimates by c.
    let mut scaled = out.panel.clone();
    for v in scaled.y.iter_mut() {
        *v *= c;
    }
    let naive = estimate_naive(&scaled).unwrap();
    assert!((naive.beta1 - c * base_naive.beta1).abs() < 1e-10);
    let sbc = estimate_sbc(&scaled).unwrap();
    assert!(
        (sbc.beta1 - c * base_sbc.beta1).abs() <= 1e-4 * c * base_sbc.beta1.abs(),
        "{} vs {}",
        sbc.beta1,
        c * base_sbc.beta1
    );
    assert!(
        (sbc.se.unwrap() - c * base_sbc.se.unwrap()).abs() <= 1e-4 * c * base_sbc.se.unwrap()
    );
}
