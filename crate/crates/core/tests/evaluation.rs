use std::collections::HashSet;

use factorlab::case_study::{self, SPEND};
use factorlab::dataset::{Dataset, UnitRecord};
use factorlab::design::{full_factorial, select_holdout, Design};
use factorlab::estimate::{fit_hte, fit_main_effects, EffectsFit};
use factorlab::evaluate::{
    erupt, eval_fixed_prediction, eval_optimal_prediction, personalized_policy, segment_validation,
    validate_holdout,
};
use factorlab::factor_space::Variant;
use factorlab::policy::{optimal_global, optimal_personalized};
use factorlab::sim::{generate, paper_analogue, rollout_experiment, PairInteraction, SimConfig};

const HOLDOUT_SEED: u64 = 7;

fn holdout_design() -> (Design, Variant) {
    select_holdout(&case_study::in_sample_design(), HOLDOUT_SEED).unwrap()
}

fn additive_truth() -> SimConfig {
    SimConfig::from_fit(&case_study::main_effects_fit(), &[], 1.0, 0).unwrap()
}

fn rejection_rate(cfg: &SimConfig, design: &Design, n: usize, reps: u64) -> f64 {
    let rejected = (0..reps)
        .filter(|&s| {
            let data = generate(&cfg.clone().with_seed(1_000 + s), design, n).unwrap();
            let fit = fit_main_effects(&data).unwrap();
            validate_holdout(&data, &fit).unwrap().p_value < 0.05
        })
        .count();
    rejected as f64 / reps as f64
}

#[test]
fn holdout_test_has_nominal_size_under_additivity() {
    let (design, _) = holdout_design();
    let rate = rejection_rate(&additive_truth(), &design, 9_000, 300);
    assert!((0.02..=0.09).contains(&rate), "size {rate}");
}

#[test]
fn holdout_test_detects_a_strong_interaction_on_the_holdout_cell() {
    let (design, h) = holdout_design();
    let base = additive_truth();
    let pilot = generate(&base, &design, 9_000).unwrap();
    let se = fit_main_effects(&pilot).unwrap().standard_errors().unwrap();
    let scale = se[1..].iter().copied().fold(0.0, f64::max);
    let cfg = base
        .with_interaction(PairInteraction {
            factor_a: 0,
            level_a: h.level(0),
            factor_b: 2,
            level_b: h.level(2),
            value: 8.0 * scale,
        })
        .unwrap();
    let power = rejection_rate(&cfg, &design, 9_000, 200);
    assert!(power > 0.8, "power {power}");
}

#[test]
fn holdout_statistic_ignores_outcome_shifts() {
    let (design, _) = holdout_design();
    let data = generate(&additive_truth().with_seed(3), &design, 5_000).unwrap();
    let shifted = data
        .with_outcomes(data.records().iter().map(|r| r.outcome.map(|y| y - 40.0)).collect())
        .unwrap();
    let a = validate_holdout(&data, &fit_main_effects(&data).unwrap()).unwrap();
    let b = validate_holdout(&shifted, &fit_main_effects(&shifted).unwrap()).unwrap();
    assert_eq!(a.arms.len(), 8);
    assert!((a.statistic - b.statistic).abs() <= 1e-8 * a.statistic.max(1.0));
    assert_eq!(a.dof, b.dof);
}

fn segment_world() -> (Dataset, EffectsFit, Variant) {
    let (design, h) = holdout_design();
    let data = generate(&paper_analogue(), &design, 40_000).unwrap();
    let fit = fit_hte(&data, &[SPEND]).unwrap();
    (data, fit, h)
}

#[test]
fn segment_validation_on_a_well_specified_world() {
    let (data, fit, h) = segment_world();
    let rep = segment_validation(&data, &fit, &h, 10, &[SPEND]).unwrap();
    assert_eq!(rep.rows.len(), 80);
    let (lo, hi) = (rep.group_sizes.iter().min().unwrap(), rep.group_sizes.iter().max().unwrap());
    assert!(hi - lo <= 1);
    assert!((rep.slope - 1.0).abs() < 3.0 * rep.slope_se, "slope {} ± {}", rep.slope, rep.slope_se);
    assert!(rep.slope > 0.0 && rep.slope_p_value < 0.05);
    assert!(rep.predicted_variance < rep.observed_variance);
}

#[test]
fn segment_groups_partition_the_units() {
    let (data, fit, h) = segment_world();
    let rep = segment_validation(&data, &fit, &h, 7, &[SPEND]).unwrap();
    let ids: HashSet<&str> = rep.assignments.iter().map(|(id, _)| id.as_str()).collect();
    assert_eq!(ids.len(), data.len());
    assert_eq!(rep.assignments.len(), data.len());
    assert_eq!(rep.group_sizes.iter().sum::<usize>(), data.len());
}

#[test]
fn optimal_prediction_dominates_every_fixed_policy() {
    let cfg = paper_analogue();
    let data = generate(&cfg, &full_factorial(cfg.space()), 5_000).unwrap();
    let fit = case_study::spend_model_fit();
    let best = eval_optimal_prediction(&fit, &data).unwrap();
    for v in fit.space().enumerate_variants() {
        assert!(best >= eval_fixed_prediction(&fit, &data, &v).unwrap());
    }
}

#[test]
fn without_heterogeneity_optimal_prediction_is_the_global_optimum() {
    let cfg = paper_analogue();
    let data = generate(&cfg, &full_factorial(cfg.space()), 500).unwrap();
    let fit = case_study::main_effects_fit();
    let global = optimal_global(&fit);
    let want = fit.predict_outcome(&global, None).unwrap();
    assert!((eval_optimal_prediction(&fit, &data).unwrap() - want).abs() < 1e-12);
}

/// Round-robin assignment over all variants: equal arm sizes, propensity 1/m.
fn uniform_dataset(cfg: &SimConfig, per_arm: usize) -> Dataset {
    let design = full_factorial(cfg.space());
    let variants = cfg.space().enumerate_variants();
    let m = variants.len();
    let units = cfg.draw_units(per_arm * m);
    let records = units
        .into_iter()
        .enumerate()
        .map(|(i, u)| {
            let v = variants[i % m].clone();
            let y = cfg.mean_outcome(&v, &u.covariates) + ((i * 37) % 11) as f64 * 0.1;
            UnitRecord {
                unit_id: u.unit_id,
                covariates: u.covariates,
                assigned: v,
                outcome: Some(y),
                propensity: 1.0 / m as f64,
            }
        })
        .collect();
    Dataset::new(cfg.covariate_names(), records, design).unwrap()
}

#[test]
fn erupt_under_uniform_allocation_is_the_matched_mean_identity() {
    let cfg = paper_analogue();
    let data = uniform_dataset(&cfg, 50);
    let fit = case_study::spend_model_fit();
    let policy = personalized_policy(&fit, &data).unwrap();
    let rep = erupt(&data, &policy).unwrap();
    let m = cfg.space().variant_count() as f64;
    let matched: Vec<f64> = data
        .records()
        .iter()
        .filter(|r| policy(&r.covariates) == r.assigned)
        .map(|r| r.outcome.unwrap())
        .collect();
    let identity = matched.iter().sum::<f64>() * m / data.len() as f64;
    assert_eq!(rep.matched, matched.len());
    assert!((rep.value - identity).abs() <= 1e-12 * identity.abs().max(1.0));
}

#[test]
fn erupt_of_a_constant_policy_is_the_arm_mean() {
    let cfg = paper_analogue();
    let data = uniform_dataset(&cfg, 40);
    for v in cfg.space().enumerate_variants() {
        let ys: Vec<f64> = data.arm(&v).map(|r| r.outcome.unwrap()).collect();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let rep = erupt(&data, |_| v.clone()).unwrap();
        assert!((rep.value - mean).abs() <= 1e-12 * mean.abs().max(1.0));
    }
}

#[test]
fn erupt_flags_variants_outside_the_design() {
    let (design, h) = holdout_design();
    let data = generate(&additive_truth(), &design, 400).unwrap();
    let outside = case_study::space()
        .enumerate_variants()
        .into_iter()
        .find(|v| design.run_for(v).is_none() && *v != h)
        .unwrap();
    let rep = erupt(&data, |_| outside.clone()).unwrap();
    assert_eq!((rep.value, rep.matched, rep.unavailable), (0.0, 0, data.len()));
}

#[test]
fn erupt_recovers_the_oracle_policy_value() {
    let cfg = paper_analogue();
    let data = generate(&cfg, &full_factorial(cfg.space()), 48_000).unwrap();
    let truth = cfg.truth_fit().unwrap();
    let policy = personalized_policy(&truth, &data).unwrap();
    let rep = erupt(&data, &policy).unwrap();
    let n = data.len() as f64;
    let terms: Vec<f64> = data
        .records()
        .iter()
        .map(|r| if policy(&r.covariates) == r.assigned { r.outcome.unwrap() / r.propensity } else { 0.0 })
        .collect();
    let sd = (terms.iter().map(|t| (t - rep.value).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let oracle = data.records().iter().map(|r| cfg.mean_outcome(&policy(&r.covariates), &r.covariates)).sum::<f64>() / n;
    assert!((rep.value - oracle).abs() < 4.0 * sd / n.sqrt(), "{} vs {oracle}", rep.value);
}

#[test]
fn rollout_confirms_the_personalization_gain() {
    let cfg = paper_analogue();
    let truth = cfg.truth_fit().unwrap();
    let global = optimal_global(&truth);
    let personal = |x: &[f64]| optimal_personalized(&truth, x).unwrap();
    let rep = rollout_experiment(&cfg, personal, |_| global.clone(), 200_000, 11).unwrap();
    let population = cfg.clone().with_seed(99).draw_units(200_000);
    let gain = population
        .iter()
        .map(|u| cfg.mean_outcome(&personal(&u.covariates), &u.covariates) - cfg.mean_outcome(&global, &u.covariates))
        .sum::<f64>()
        / population.len() as f64;
    assert!(gain > 0.0);
    assert!((rep.difference - gain).abs() < 4.0 * rep.std_err, "{} vs {gain}", rep.difference);
}

#[test]
fn identical_rollout_policies_show_no_difference_in_means() {
    let cfg = additive_truth().with_noise_sd(0.0).unwrap();
    let v = case_study::space().baseline_variant();
    let rep = rollout_experiment(&cfg, |_| v.clone(), |_| v.clone(), 1_000, 5).unwrap();
    assert_eq!(rep.difference, 0.0);
    assert_eq!(rep.p_value, 1.0);
}
