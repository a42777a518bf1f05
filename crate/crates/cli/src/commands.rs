use std::collections::BTreeMap;
use std::fmt::Write as _;

use factorlab::case_study;
use factorlab::design::{
    check_design, full_factorial, mixed_level_fraction_with, plackett_burman, regular_two_level_fraction,
    select_holdout, DEFAULT_RESTARTS,
};
use factorlab::estimate::{fit_hte_with, fit_main_effects, EffectsFit, FitOptions};
use factorlab::evaluate::{
    erupt, personalized_policy, segment_validation, validate_holdout_with, HoldoutCovariance,
};
use factorlab::hte_knn::{transformed_outcome, tune_k, KnnCate};
use factorlab::policy::{
    optimal_global, optimal_personalized, predict_all, segment_policy_table, PredictionTable, SegmentTable,
};
use factorlab::power::{design_sample_size, per_level_sample_size, velocity, PowerSpec};
use factorlab::sim::{compare_frameworks, full_design, generate};
use factorlab::{randomize, Dataset, Design, FactorSpace, Variant};
use serde_json::{json, Value};

use crate::error::CliError;
use crate::inputs;
use crate::output::{write_atomic, Outcome, RunContext};
use crate::{
    AssignArgs, CateArgs, Command, DataArgs, DesignArgs, DesignKind, EruptArgs, FitArgs, OptimizeArgs, OptimizeMode,
    PowerArgs, SimulateArgs, ValidateArgs,
};

pub fn run(command: &Command, ctx: &mut RunContext) -> Result<Outcome, CliError> {
    match command {
        Command::Design(a) => design(a, ctx),
        Command::Power(a) => power(a, ctx),
        Command::Assign(a) => assign(a, ctx),
        Command::Fit(a) => fit(a, ctx),
        Command::Cate(a) => cate(a, ctx),
        Command::Optimize(a) => optimize(a, ctx),
        Command::Validate(a) => validate(a, ctx),
        Command::Erupt(a) => erupt_cmd(a, ctx),
        Command::Simulate(a) => simulate(a, ctx),
        Command::ReproducePaper(_) => reproduce(),
    }
}

fn seed(ctx: &mut RunContext) -> u64 {
    *ctx.seed.get_or_insert(0)
}

fn runs_json(design: &Design) -> Value {
    let space = design.space();
    design
        .runs()
        .iter()
        .map(|r| json!({ "levels": space.level_names(&r.variant), "weight": r.weight, "role": r.role }))
        .collect()
}

fn design(a: &DesignArgs, ctx: &mut RunContext) -> Result<Outcome, CliError> {
    let seed = seed(ctx);
    let need_space = |ctx: &mut RunContext| -> Result<FactorSpace, CliError> {
        let path = a.space.as_deref().ok_or_else(|| CliError::Invalid("--space is required for this design kind".into()))?;
        inputs::space(ctx, path)
    };
    let need_runs = || a.runs.ok_or_else(|| CliError::Invalid("--runs is required for this design kind".into()));
    let mut design = match a.kind {
        DesignKind::Full => full_factorial(&need_space(ctx)?),
        DesignKind::Regular => {
            if a.generators.is_empty() {
                return Err(CliError::Invalid("regular fractions need at least one --generator".into()));
            }
            regular_two_level_fraction(&need_space(ctx)?, &a.generators)?
        }
        DesignKind::PlackettBurman => {
            let factors = a.factors.ok_or_else(|| CliError::Invalid("--factors is required for plackett-burman".into()))?;
            plackett_burman(factors, need_runs()?)?
        }
        DesignKind::Mixed => {
            let space = need_space(ctx)?;
            let found = mixed_level_fraction_with(&space, need_runs()?, seed, a.restarts.unwrap_or(DEFAULT_RESTARTS))?;
            found.design
        }
    };
    let mut holdout = None;
    if a.holdout {
        let (with_holdout, h) = select_holdout(&design, seed)?;
        holdout = Some(with_holdout.space().variant_label(&h));
        design = with_holdout;
    }
    let report = check_design(&design);
    let mut text = String::new();
    let space = design.space();
    writeln!(text, "{} runs over {} variants", design.runs().len(), space.variant_count()).unwrap();
    for r in design.runs() {
        writeln!(text, "  {:<8} {:>8.5}  {}", r.role.to_string(), r.weight, space.variant_label(&r.variant)).unwrap();
    }
    write!(text, "{report}").unwrap();
    let result = json!({
        "generator": design.generator_spec(),
        "runs": runs_json(&design),
        "holdout": holdout,
        "balance": report,
    });
    Ok(Outcome::report(text, result).with_artifact("design", design.to_toml_string().into_bytes()))
}

fn power(a: &PowerArgs, ctx: &mut RunContext) -> Result<Outcome, CliError> {
    let space = a.space.as_deref().map(|p| inputs::space(ctx, p)).transpose()?;
    let mut text = String::new();
    let mut result = serde_json::Map::new();
    if let Some(space) = &space {
        let v = velocity(space);
        write!(text, "{v}").unwrap();
        result.insert("velocity".into(), json!(v));
    }
    match (a.sigma, a.mde) {
        (Some(sigma), Some(mde)) => {
            let spec = PowerSpec::new(sigma, mde, a.alpha, 1.0 - a.power)?.two_sided(a.two_sided);
            let per_level = per_level_sample_size(&spec)?;
            writeln!(text, "units per level      {per_level}").unwrap();
            result.insert("per_level_sample_size".into(), json!(per_level));
            result.insert("spec".into(), json!(spec));
            if let Some(space) = &space {
                let specs: BTreeMap<String, PowerSpec> =
                    space.factors().iter().map(|f| (f.name().to_string(), spec)).collect();
                let total = design_sample_size(space, &specs)?;
                writeln!(text, "units in total       {total}").unwrap();
                result.insert("design_sample_size".into(), json!(total));
            }
        }
        (None, None) if space.is_some() => {}
        (None, None) => return Err(CliError::Invalid("give --space, or --sigma with --mde".into())),
        _ => return Err(CliError::Invalid("--sigma and --mde go together".into())),
    }
    Ok(Outcome::report(text, Value::Object(result)))
}

fn arm_counts(data: &Dataset) -> (String, Value) {
    let design = data.design();
    let space = design.space();
    let mut text = String::new();
    let mut rows = Vec::new();
    for run in design.runs() {
        let n = data.records().iter().filter(|r| r.assigned == run.variant).count();
        writeln!(text, "  {:<8} {:>7}  {}", run.role.to_string(), n, space.variant_label(&run.variant)).unwrap();
        rows.push(json!({ "levels": space.level_names(&run.variant), "role": run.role, "units": n }));
    }
    (text, Value::Array(rows))
}

fn assign(a: &AssignArgs, ctx: &mut RunContext) -> Result<Outcome, CliError> {
    let seed = seed(ctx);
    let design = inputs::design(ctx, &a.design)?;
    let (schema, units) = inputs::units(ctx, &a.units)?;
    let data = randomize(units, schema, &design, seed)?;
    let mut csv = Vec::new();
    data.write_csv_to(&mut csv)?;
    let (counts, rows) = arm_counts(&data);
    let text = format!("{} units assigned\n{counts}", data.len());
    Ok(Outcome::report(text, json!({ "units": data.len(), "arms": rows })).with_artifact("dataset", csv))
}

fn load_data(a: &DataArgs, ctx: &mut RunContext) -> Result<Dataset, CliError> {
    let design = inputs::design(ctx, &a.design)?;
    inputs::dataset(ctx, &a.data, &design)
}

fn fit_model(data: &Dataset, covariates: &[String], options: FitOptions) -> Result<EffectsFit, CliError> {
    Ok(if covariates.is_empty() {
        fit_main_effects(data)?
    } else {
        fit_hte_with(data, covariates, options)?
    })
}

fn fit(a: &FitArgs, ctx: &mut RunContext) -> Result<Outcome, CliError> {
    let data = load_data(&a.data, ctx)?;
    let options = FitOptions { robust: a.robust, standardize: a.standardize };
    let model = fit_model(&data, &a.data.covariates, options)?;
    let inf = model.inference().expect("fitted models carry inference");
    let mut text = format!("{model}");
    let mut tests = Vec::new();
    if model.has_covariates() {
        let mut selections = vec![("all interactions".to_string(), model.interaction_keys(None))];
        for (c, name) in model.covariates().iter().enumerate() {
            selections.push((format!("interactions with {name}"), model.interaction_keys(Some(c))));
        }
        for (name, keys) in selections {
            let t = model.joint_test(&keys)?;
            let verdict = if t.p_value < a.alpha { "reject" } else { "retain" };
            writeln!(
                text,
                "joint test, {name}: F({}, {}) = {:.4}, p = {:.4} ({verdict} at {})",
                t.dof_numerator,
                t.dof_denominator.map_or("inf".into(), |d| d.to_string()),
                t.statistic,
                t.p_value,
                a.alpha
            )
            .unwrap();
            tests.push(json!({ "selection": name, "test": t, "reject": t.p_value < a.alpha }));
        }
    }
    if let Some(path) = &a.coefficients_out {
        write_atomic(&[(path.clone(), inputs::coefficients_toml(&model).into_bytes())])?;
    }
    let result = json!({
        "covariates": model.covariates(),
        "coefficients": model.coefficient_table(),
        "n_used": inf.n_used,
        "residual_sd": inf.residual_sd,
        "dof": inf.dof,
        "robust": inf.robust,
        "joint_tests": tests,
    });
    Ok(Outcome::report(text, result))
}

fn cate(a: &CateArgs, ctx: &mut RunContext) -> Result<Outcome, CliError> {
    let data = load_data(&a.data, ctx)?;
    if a.data.covariates.is_empty() {
        return Err(CliError::Invalid("--covariates is required for nearest-neighbour estimates".into()));
    }
    let space = data.design().space().clone();
    let (va, vb) = (inputs::variant(&space, &a.a)?, inputs::variant(&space, &a.b)?);
    let model = KnnCate::new(&data, &a.data.covariates, &va, &vb)?;
    let mut text = String::new();
    let mut tuning = Value::Null;
    let k = match (a.k, a.grid.is_empty()) {
        (Some(k), _) => k,
        (None, false) => {
            let rep = tune_k(&data, &a.data.covariates, &va, &vb, &a.grid)?;
            for (k, loss) in &rep.losses {
                writeln!(text, "K = {k:<6} leave-one-out loss {loss:.6}").unwrap();
            }
            writeln!(text, "selected K = {}", rep.k).unwrap();
            tuning = json!(rep);
            rep.k
        }
        (None, true) => return Err(CliError::Invalid("give --k or a tuning --grid".into())),
    };
    let points = a.at.iter().map(|s| inputs::point(s)).collect::<Result<Vec<_>, _>>()?;
    let estimates = model.estimate_many(&points, k)?;
    let t = transformed_outcome(&data, &va, &vb)?;
    writeln!(text, "{} vs {}, K = {k}", space.variant_label(&va), space.variant_label(&vb)).unwrap();
    for e in &estimates {
        let x: Vec<String> = e.x.iter().map(|v| v.to_string()).collect();
        writeln!(text, "  x = ({})  tau = {:.6}", x.join(", "), e.tau_hat).unwrap();
    }
    writeln!(text, "transformed-outcome mean (average effect) {:.6} over {} units", t.mean(), t.values.len()).unwrap();
    let result = json!({
        "variant_a": space.level_names(&va),
        "variant_b": space.level_names(&vb),
        "k": k,
        "tuning": tuning,
        "estimates": estimates.iter().map(|e| json!({ "x": e.x, "tau_hat": e.tau_hat })).collect::<Vec<_>>(),
        "transformed_outcome_mean": t.mean(),
        "arm_sizes": model.arm_sizes(),
    });
    Ok(Outcome::report(text, result))
}

fn optimize(a: &OptimizeArgs, ctx: &mut RunContext) -> Result<Outcome, CliError> {
    let (model, design) = match (&a.coefficients, &a.design, &a.data) {
        (Some(coef), design, _) => {
            let space = inputs::space(ctx, a.space.as_deref().expect("clap enforces --space"))?;
            let model = inputs::coefficients(ctx, coef, &space)?;
            let design = design.as_deref().map(|p| inputs::design(ctx, p)).transpose()?;
            (model, design)
        }
        (None, Some(design), Some(data)) => {
            let args = DataArgs { design: design.clone(), data: data.clone(), covariates: a.covariates.clone() };
            let data = load_data(&args, ctx)?;
            let model = fit_model(&data, &a.covariates, FitOptions::default())?;
            (model, Some(data.design().clone()))
        }
        _ => return Err(CliError::Invalid("give --coefficients with --space, or --design with --data".into())),
    };
    let space = model.space().clone();
    let x = (!a.x.is_empty()).then_some(a.x.as_slice());
    let label = |v: &Variant| space.variant_label(v);
    let mut text = String::new();
    let result = match a.mode {
        OptimizeMode::Global => {
            let v = optimal_global(&model);
            let predicted = if model.has_covariates() { None } else { Some(model.predict_outcome(&v, None)?) };
            writeln!(text, "global optimum: {}", label(&v)).unwrap();
            if let Some(p) = predicted {
                writeln!(text, "predicted outcome: {p:.5}").unwrap();
            }
            json!({ "optimal_variant": space.level_names(&v), "predicted_outcome": predicted })
        }
        OptimizeMode::Personalized => {
            let x = x.ok_or_else(|| CliError::Invalid("personalized mode needs --x".into()))?;
            let v = optimal_personalized(&model, x)?;
            let predicted = model.predict_outcome(&v, Some(x))?;
            writeln!(text, "optimal at x = {x:?}: {}\npredicted outcome: {predicted:.5}", label(&v)).unwrap();
            json!({ "x": x, "optimal_variant": space.level_names(&v), "predicted_outcome": predicted })
        }
        OptimizeMode::Table => {
            let covariate = match &a.covariate {
                Some(c) => c.clone(),
                None => model
                    .covariates()
                    .first()
                    .cloned()
                    .ok_or_else(|| CliError::Invalid("table mode needs a model with covariates".into()))?,
            };
            let grid = inputs::int_range(&a.grid)?;
            let rows = segment_policy_table(&model, &covariate, &grid, x)?;
            write!(text, "{}", SegmentTable(&space, &rows)).unwrap();
            json!({
                "covariate": covariate,
                "rows": rows.iter().map(|r| json!({
                    "lo": r.lo, "hi": r.hi, "optimal_variant": space.level_names(&r.optimal_variant),
                    "constant": r.constant, "slope": r.slope,
                })).collect::<Vec<_>>(),
            })
        }
        OptimizeMode::AllPolicies => {
            let preds = predict_all(&model, design.as_ref(), x)?;
            write!(text, "{}", PredictionTable(&space, &preds)).unwrap();
            json!(preds
                .iter()
                .map(|p| json!({
                    "levels": space.level_names(&p.variant),
                    "predicted_outcome": p.predicted_outcome,
                    "in_sample": p.in_sample,
                }))
                .collect::<Vec<_>>())
        }
    };
    Ok(Outcome::report(text, result))
}

fn validate(a: &ValidateArgs, ctx: &mut RunContext) -> Result<Outcome, CliError> {
    let data = load_data(&a.data, ctx)?;
    let model = fit_model(&data, &a.data.covariates, FitOptions::default())?;
    let mode = if a.independent { HoldoutCovariance::IndependentFit } else { HoldoutCovariance::SharedUnits };
    let rep = validate_holdout_with(&data, &model, mode)?;
    let space = data.design().space().clone();
    let mut text = format!("holdout {} ({} units)\n", space.variant_label(&rep.holdout), rep.holdout_n);
    writeln!(text, "{:<40} {:>7} {:>11} {:>9} {:>11}", "arm", "n", "observed", "se", "predicted").unwrap();
    for arm in &rep.arms {
        writeln!(
            text,
            "{:<40} {:>7} {:>11.5} {:>9.5} {:>11.5}",
            space.variant_label(&arm.variant),
            arm.n,
            arm.observed_diff,
            arm.observed_se,
            arm.predicted_diff
        )
        .unwrap();
    }
    let reject = rep.p_value < a.alpha;
    writeln!(
        text,
        "joint Wald statistic {:.4} on {} dof, p = {:.4}: {} at {}",
        rep.statistic,
        rep.dof,
        rep.p_value,
        if reject { "predictions rejected" } else { "no evidence against the predictions" },
        a.alpha
    )
    .unwrap();
    let arms: Vec<Value> = rep
        .arms
        .iter()
        .map(|arm| {
            json!({
                "levels": space.level_names(&arm.variant), "n": arm.n, "observed_diff": arm.observed_diff,
                "observed_se": arm.observed_se, "predicted_diff": arm.predicted_diff,
            })
        })
        .collect();
    let mut segments = Value::Null;
    if let Some(k) = a.groups {
        let outcome_covs = if a.outcome_covariates.is_empty() { &a.data.covariates } else { &a.outcome_covariates };
        if outcome_covs.is_empty() {
            return Err(CliError::Invalid("segment comparison needs --outcome-covariates or --covariates".into()));
        }
        let seg = segment_validation(&data, &model, &rep.holdout, k, outcome_covs)?;
        writeln!(
            text,
            "segments: {} groups x {} arms = {} comparisons; slope {:.4} (se {:.4}, p = {:.4}); \
             variance predicted {:.5} vs observed {:.5}",
            seg.k_groups,
            rep.arms.len(),
            seg.rows.len(),
            seg.slope,
            seg.slope_se,
            seg.slope_p_value,
            seg.predicted_variance,
            seg.observed_variance
        )
        .unwrap();
        segments = json!({
            "groups": seg.k_groups,
            "group_sizes": seg.group_sizes,
            "rows": seg.rows.iter().map(|r| json!({
                "group": r.group, "levels": space.level_names(&r.arm), "predicted": r.predicted,
                "observed": r.observed, "observed_se": r.observed_se, "n_arm": r.n_arm, "n_holdout": r.n_holdout,
            })).collect::<Vec<_>>(),
            "slope": seg.slope,
            "slope_se": seg.slope_se,
            "slope_p_value": seg.slope_p_value,
            "predicted_variance": seg.predicted_variance,
            "observed_variance": seg.observed_variance,
        });
    }
    let result = json!({
        "holdout": space.level_names(&rep.holdout),
        "holdout_n": rep.holdout_n,
        "covariance": rep.covariance,
        "arms": arms,
        "statistic": rep.statistic,
        "dof": rep.dof,
        "p_value": rep.p_value,
        "reject": reject,
        "segments": segments,
    });
    Ok(Outcome::report(text, result))
}

fn erupt_cmd(a: &EruptArgs, ctx: &mut RunContext) -> Result<Outcome, CliError> {
    let data = load_data(&a.data, ctx)?;
    let space = data.design().space().clone();
    let rep = match a.policy.as_str() {
        "personalized" => {
            let model = fit_model(&data, &a.data.covariates, FitOptions::default())?;
            let policy = personalized_policy(&model, &data)?;
            erupt(&data, policy)?
        }
        "global" => {
            let model = fit_model(&data, &a.data.covariates, FitOptions::default())?;
            let v = optimal_global(&model);
            erupt(&data, |_| v.clone())?
        }
        levels => {
            let v = inputs::variant(&space, levels)?;
            erupt(&data, |_| v.clone())?
        }
    };
    let text = format!("policy {}: {rep}\n", a.policy);
    Ok(Outcome::report(text, json!({ "policy": a.policy, "report": rep })))
}

fn simulate(a: &SimulateArgs, ctx: &mut RunContext) -> Result<Outcome, CliError> {
    let mut cfg = inputs::sim_config(ctx, &a.config)?;
    match ctx.seed {
        Some(s) => cfg = cfg.with_seed(s),
        None => ctx.seed = Some(cfg.seed()),
    }
    let design = match &a.design {
        Some(p) => inputs::design(ctx, p)?,
        None => full_design(&cfg),
    };
    if design.space() != cfg.space() {
        return Err(CliError::Invalid("design and config use different factor spaces".into()));
    }
    let data = generate(&cfg, &design, a.units)?;
    let mut csv = Vec::new();
    data.write_csv_to(&mut csv)?;
    let (counts, rows) = arm_counts(&data);
    let mut text = format!("{} units simulated\n{counts}", data.len());
    let mut comparison = Value::Null;
    if let Some(reps) = a.compare {
        let cmp = compare_frameworks(&cfg, a.units, reps)?;
        writeln!(
            text,
            "variance ratio factorial / A/B/n: {:.4} empirical, {:.4} theoretical ({} replications)",
            cmp.empirical_ratio, cmp.theoretical_ratio, cmp.replications
        )
        .unwrap();
        comparison = json!(cmp);
    }
    let result = json!({ "units": data.len(), "arms": rows, "framework_comparison": comparison });
    Ok(Outcome::report(text, result).with_artifact("dataset", csv))
}

const TABLE_TOLERANCE: f64 = 5e-4;

fn reproduce() -> Result<Outcome, CliError> {
    let space = case_study::space();
    let preds = predict_all(&case_study::main_effects_fit(), Some(&case_study::in_sample_design()), None)?;
    let mut text = String::from("Predicted outcome of every policy from the main-effects coefficients\n");
    writeln!(text, "{:<40} {:>10} {:>10} {:>10}  in sample", "policy", "computed", "published", "diff").unwrap();
    let mut worst = 0.0f64;
    let mut order_ok = true;
    let mut rows = Vec::new();
    for (p, fixture) in preds.iter().zip(case_study::ALL_POLICY_PREDICTIONS.iter()) {
        let want = case_study::prediction_variant(fixture);
        order_ok &= want == p.variant;
        let published = case_study::ALL_POLICY_PREDICTIONS
            .iter()
            .find(|r| case_study::prediction_variant(r) == p.variant)
            .expect("fixture covers every variant")
            .4;
        let diff = p.predicted_outcome - published;
        worst = worst.max(diff.abs());
        writeln!(
            text,
            "{:<40} {:>10.5} {:>10.5} {:>10.5}  {}",
            space.variant_label(&p.variant),
            p.predicted_outcome,
            published,
            diff,
            if p.in_sample { "yes" } else { "no" }
        )
        .unwrap();
        rows.push(json!({
            "levels": space.level_names(&p.variant), "computed": p.predicted_outcome,
            "published": published, "in_sample": p.in_sample,
        }));
    }
    writeln!(text, "max |diff| {worst:.2e} (tolerance {TABLE_TOLERANCE:e}); order {}", if order_ok { "identical" } else { "differs" })
        .unwrap();

    let grid: Vec<i64> = (0..=100).collect();
    let segs = segment_policy_table(&case_study::spend_model_fit(), case_study::SPEND, &grid, None)?;
    writeln!(text, "\nOptimal policy by average order spend (grid 0..100)").unwrap();
    writeln!(text, "{:<10} {:<10} {:<40} {:>9} {:>9} {:>9} {:>9}", "computed", "published", "policy", "constant", "pub.", "slope", "pub.")
        .unwrap();
    let mut seg_rows = Vec::new();
    for (i, r) in segs.iter().enumerate() {
        let fixture = case_study::SPEND_POLICY_TABLE.get(i);
        let published_range = fixture.map_or("-".to_string(), |f| match f.hi {
            Some(hi) => format!("{}-{}", f.lo, hi),
            None => format!("{}+", f.lo),
        });
        writeln!(
            text,
            "{:<10} {:<10} {:<40} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            format!("{}-{}", r.lo, r.hi),
            published_range,
            space.variant_label(&r.optimal_variant),
            r.constant,
            fixture.map_or(f64::NAN, |f| f.constant),
            r.slope,
            fixture.map_or(f64::NAN, |f| f.slope),
        )
        .unwrap();
        seg_rows.push(json!({
            "lo": r.lo, "hi": r.hi, "levels": space.level_names(&r.optimal_variant),
            "constant": r.constant, "slope": r.slope,
            "published": fixture.map(|f| json!({ "lo": f.lo, "hi": f.hi, "levels": f.levels, "constant": f.constant, "slope": f.slope })),
        }));
    }
    writeln!(
        text,
        "segment boundaries are recomputed from the rounded published coefficients and may shift by a unit or two"
    )
    .unwrap();

    let v = velocity(&space);
    write!(text, "\nVelocity of the {} variant space\n{v}", space.variant_count()).unwrap();

    let result = json!({
        "policy_predictions": rows,
        "max_abs_diff": worst,
        "order_identical": order_ok,
        "tolerance": TABLE_TOLERANCE,
        "segment_table": seg_rows,
        "velocity": v,
    });
    let mut outcome = Outcome::report(text, result);
    if worst > TABLE_TOLERANCE || !order_ok {
        outcome.failure = Some(format!(
            "policy predictions disagree with the bundled fixtures (max |diff| {worst:.2e}, order {})",
            if order_ok { "identical" } else { "differs" }
        ));
    }
    Ok(outcome)
}
