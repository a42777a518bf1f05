//! Validation of fitted models against the holdout arm, and policy values.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dataset::{Dataset, UnitRecord};
use crate::design::RunRole;
use crate::error::{Error, Result};
use crate::estimate::{least_squares, EffectsFit};
use crate::factor_space::Variant;
use crate::policy::optimal_personalized;
use crate::special::{chi2_upper_p, t_two_sided_p};

/// How the covariance of observed-minus-predicted holdout differences is
/// built.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HoldoutCovariance {
    /// Accounts for the fit having been trained on the same in-sample units
    /// whose arm means enter the differences. The statistic uses a
    /// pseudo-inverse and its degrees of freedom equal the numerical rank.
    #[default]
    SharedUnits,
    /// Treats the fit as independent of the arm means: Cov(d) + C V C'.
    /// Degrees of freedom equal the arm count.
    IndependentFit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HoldoutArm {
    pub variant: Variant,
    pub n: usize,
    /// mean(holdout) − mean(arm).
    pub observed_diff: f64,
    pub observed_se: f64,
    pub predicted_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HoldoutReport {
    pub holdout: Variant,
    pub holdout_n: usize,
    pub arms: Vec<HoldoutArm>,
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub covariance: HoldoutCovariance,
}

fn mean_var(ys: &[f64]) -> (f64, f64) {
    let n = ys.len() as f64;
    let m = ys.iter().sum::<f64>() / n;
    let v = if ys.len() > 1 {
        ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, v)
}

/// Mean covariate vector (fit order) over records.
fn mean_covariates(fit: &EffectsFit, data: &Dataset, rows: &[&UnitRecord]) -> Result<Option<Vec<f64>>> {
    if !fit.has_covariates() {
        return Ok(None);
    }
    let idx = data.covariate_indices(fit.covariates())?;
    let n = rows.len() as f64;
    Ok(Some(
        idx.iter()
            .map(|&c| rows.iter().map(|r| r.covariates[c]).sum::<f64>() / n)
            .collect(),
    ))
}

pub fn validate_holdout(data: &Dataset, fit: &EffectsFit) -> Result<HoldoutReport> {
    validate_holdout_with(data, fit, HoldoutCovariance::default())
}

/// Joint Wald test that observed holdout-minus-arm differences match the
/// fit's predictions for every in-sample arm.
pub fn validate_holdout_with(
    data: &Dataset,
    fit: &EffectsFit,
    mode: HoldoutCovariance,
) -> Result<HoldoutReport> {
    let design = data.design();
    if design.space() != fit.space() {
        return Err(Error::InvalidDesign("dataset and fit use different factor spaces".into()));
    }
    let h = design
        .holdout()
        .ok_or_else(|| Error::InvalidDesign("design has no holdout arm".into()))?
        .variant
        .clone();
    let label = |v: &Variant| design.space().variant_label(v);
    let h_rows: Vec<&UnitRecord> = data.arm(&h).collect();
    if h_rows.len() < 2 {
        return Err(Error::InsufficientData(format!("holdout arm {} has fewer than 2 observed units", label(&h))));
    }
    let h_y: Vec<f64> = h_rows.iter().map(|r| r.outcome.expect("observed")).collect();
    let (h_mean, h_var) = mean_var(&h_y);
    let h_x = mean_covariates(fit, data, &h_rows)?;
    let h_row = DVector::from_vec(fit.regressor_row(&h, h_x.as_deref())?);

    let inference = fit.inference();
    let pooled_var = inference.map(|i| i.residual_sd * i.residual_sd);
    let k = fit.coefficients().len();
    let v = inference.map(|i| i.covariance.clone()).unwrap_or_else(|| DMatrix::zeros(k, k));
    let b = DVector::from_column_slice(fit.coefficients());

    let arms: Vec<&Variant> = design.in_sample_runs().map(|r| &r.variant).collect();
    let m = arms.len();
    let mut c_mat = DMatrix::zeros(m, k);
    let mut xbar = DMatrix::zeros(m, k);
    let mut arm_var = Vec::with_capacity(m);
    let mut report_arms = Vec::with_capacity(m);
    let mut resid = DVector::zeros(m);
    for (j, arm) in arms.iter().enumerate() {
        let rows: Vec<&UnitRecord> = data.arm(arm).collect();
        if rows.is_empty() {
            return Err(Error::InsufficientData(format!("arm {} has no observed units", label(arm))));
        }
        let ys: Vec<f64> = rows.iter().map(|r| r.outcome.expect("observed")).collect();
        let (mean, var) = mean_var(&ys);
        let var_mean = pooled_var.unwrap_or(var) / ys.len() as f64;
        let x = mean_covariates(fit, data, &rows)?;
        let row = DVector::from_vec(fit.regressor_row(arm, x.as_deref())?);
        let c = &h_row - &row;
        let predicted = c.dot(&b);
        let observed = h_mean - mean;
        resid[j] = observed - predicted;
        c_mat.set_row(j, &c.transpose());
        xbar.set_row(j, &row.transpose());
        arm_var.push(var_mean);
        report_arms.push(HoldoutArm {
            variant: (*arm).clone(),
            n: ys.len(),
            observed_diff: observed,
            observed_se: (h_var / h_y.len() as f64 + var_mean).sqrt(),
            predicted_diff: predicted,
        });
    }
    if m == 0 {
        return Err(Error::InvalidDesign("design has no in-sample arms".into()));
    }

    let hv = h_var / h_y.len() as f64;
    let mut sigma = DMatrix::from_element(m, m, hv);
    for (j, av) in arm_var.iter().enumerate() {
        sigma[(j, j)] += av;
    }
    let cvc = &c_mat * &v * c_mat.transpose();
    sigma += &cvc;
    let (statistic, dof) = match mode {
        HoldoutCovariance::SharedUnits => {
            let cross = &xbar * &v * c_mat.transpose();
            sigma += &cross + cross.transpose();
            pseudo_quadratic(&sigma, &resid)
        }
        HoldoutCovariance::IndependentFit => {
            let chol = sigma.clone().cholesky().ok_or_else(|| {
                Error::SingularCovariance("difference covariance is not positive definite".into())
            })?;
            (resid.dot(&chol.solve(&resid)), m)
        }
    };
    Ok(HoldoutReport {
        holdout: h,
        holdout_n: h_y.len(),
        arms: report_arms,
        statistic,
        dof,
        p_value: if dof == 0 { 1.0 } else { chi2_upper_p(statistic, dof as f64) },
        covariance: mode,
    })
}

/// r' Σ⁺ r over the eigen-directions with non-negligible variance, and that
/// rank.
fn pseudo_quadratic(sigma: &DMatrix<f64>, r: &DVector<f64>) -> (f64, usize) {
    let sym = (sigma + sigma.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let mut stat = 0.0;
    let mut rank = 0;
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > top * 1e-9 && lambda > 0.0 {
            let proj = eig.eigenvectors.column(i).dot(r);
            stat += proj * proj / lambda;
            rank += 1;
        }
    }
    (stat, rank)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentRow {
    pub group: usize,
    pub arm: Variant,
    /// Fit-predicted arm − holdout effect averaged over the group.
    pub predicted: f64,
    /// Observed arm − holdout mean difference in the group.
    pub observed: f64,
    pub observed_se: f64,
    pub n_arm: usize,
    pub n_holdout: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentReport {
    pub k_groups: usize,
    pub group_sizes: Vec<usize>,
    pub rows: Vec<SegmentRow>,
    pub slope: f64,
    pub slope_se: f64,
    pub slope_p_value: f64,
    pub predicted_variance: f64,
    pub observed_variance: f64,
    /// Group index of every observed unit, in dataset order.
    pub assignments: Vec<(String, usize)>,
}

/// Groups units by quantile of a covariate-only outcome model, then compares
/// fit-predicted with observed arm-vs-holdout differences per group and arm.
pub fn segment_validation<S: AsRef<str>>(
    data: &Dataset,
    fit: &EffectsFit,
    holdout: &Variant,
    k_groups: usize,
    outcome_covariates: &[S],
) -> Result<SegmentReport> {
    if k_groups < 2 {
        return Err(Error::InvalidParameter("need at least 2 groups".into()));
    }
    let design = data.design();
    if design.role_of(holdout) != Some(RunRole::Holdout) {
        return Err(Error::InvalidVariant(format!(
            "{} is not the holdout arm",
            design.space().variant_label(holdout)
        )));
    }
    let idx = data.covariate_indices(outcome_covariates)?;
    let names: Vec<String> = outcome_covariates.iter().map(|s| s.as_ref().to_string()).collect();

    // outcome model Y ~ 1 + X on in-sample observed units
    let train: Vec<&UnitRecord> = data
        .records()
        .iter()
        .filter(|r| r.outcome.is_some() && data.role_of(r) == RunRole::InSample)
        .collect();
    let p = idx.len() + 1;
    let xm = DMatrix::from_fn(train.len(), p, |i, j| if j == 0 { 1.0 } else { train[i].covariates[idx[j - 1]] });
    let y = DVector::from_iterator(train.len(), train.iter().map(|r| r.outcome.expect("observed")));
    let labels: Vec<String> = std::iter::once("Intercept".to_string()).chain(names).collect();
    let outcome_model = least_squares(&xm, &y, &labels, false)?;
    let score = |r: &UnitRecord| {
        outcome_model.coef[0] + idx.iter().enumerate().map(|(j, &c)| outcome_model.coef[j + 1] * r.covariates[c]).sum::<f64>()
    };

    let mut units: Vec<(f64, &UnitRecord)> = data
        .records()
        .iter()
        .filter(|r| r.outcome.is_some())
        .map(|r| (score(r), r))
        .collect();
    units.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.unit_id.cmp(&b.1.unit_id)));
    let n = units.len();
    if n < k_groups {
        return Err(Error::InsufficientData(format!("{n} units for {k_groups} groups")));
    }
    let group_of = |rank: usize| rank * k_groups / n;
    let mut groups: Vec<Vec<&UnitRecord>> = vec![Vec::new(); k_groups];
    for (rank, (_, r)) in units.iter().enumerate() {
        groups[group_of(rank)].push(r);
    }

    let arms: Vec<&Variant> = design.in_sample_runs().map(|r| &r.variant).collect();
    let mut rows = Vec::with_capacity(k_groups * arms.len());
    for (g, members) in groups.iter().enumerate() {
        let xs: Vec<Option<Vec<f64>>> = members
            .iter()
            .map(|r| if fit.has_covariates() { fit.covariates_of(data, r).map(Some) } else { Ok(None) })
            .collect::<Result<_>>()?;
        let outcomes_of = |v: &Variant| -> Vec<f64> {
            members.iter().filter(|r| &r.assigned == v).map(|r| r.outcome.expect("observed")).collect()
        };
        let hy = outcomes_of(holdout);
        for arm in &arms {
            let ay = outcomes_of(arm);
            if ay.len() < 2 || hy.len() < 2 {
                return Err(Error::InsufficientData(format!(
                    "group {g} has {} units of arm {} and {} holdout units; need at least 2 each",
                    ay.len(),
                    design.space().variant_label(arm),
                    hy.len()
                )));
            }
            let predicted = xs
                .iter()
                .map(|x| fit.predict_effect(arm, holdout, x.as_deref()))
                .sum::<Result<f64>>()?
                / xs.len() as f64;
            let (am, av) = mean_var(&ay);
            let (hm, hv) = mean_var(&hy);
            rows.push(SegmentRow {
                group: g,
                arm: (*arm).clone(),
                predicted,
                observed: am - hm,
                observed_se: (av / ay.len() as f64 + hv / hy.len() as f64).sqrt(),
                n_arm: ay.len(),
                n_holdout: hy.len(),
            });
        }
    }

    let pts = rows.len();
    let xm = DMatrix::from_fn(pts, 2, |i, j| if j == 0 { 1.0 } else { rows[i].predicted });
    let y = DVector::from_iterator(pts, rows.iter().map(|r| r.observed));
    let fit_line = least_squares(&xm, &y, &["Intercept".into(), "predicted".into()], false)?;
    let slope = fit_line.coef[1];
    let slope_se = fit_line.covariance[(1, 1)].sqrt();
    let var_of = |v: Vec<f64>| mean_var(&v).1;

    let mut assignments: Vec<(String, usize)> = Vec::with_capacity(n);
    for (g, members) in groups.iter().enumerate() {
        assignments.extend(members.iter().map(|r| (r.unit_id.clone(), g)));
    }
    Ok(SegmentReport {
        k_groups,
        group_sizes: groups.iter().map(Vec::len).collect(),
        predicted_variance: var_of(rows.iter().map(|r| r.predicted).collect()),
        observed_variance: var_of(rows.iter().map(|r| r.observed).collect()),
        rows,
        slope,
        slope_se,
        slope_p_value: t_two_sided_p(slope / slope_se, fit_line.dof as f64),
        assignments,
    })
}

/// Average fitted outcome when every unit receives its own optimal variant.
pub fn eval_optimal_prediction(fit: &EffectsFit, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InsufficientData("empty dataset".into()));
    }
    let mut total = 0.0;
    for r in data.records() {
        let x = fit.covariates_of(data, r)?;
        let v = optimal_personalized(fit, &x)?;
        total += fit.predict_outcome(&v, fit.has_covariates().then_some(x.as_slice()))?;
    }
    Ok(total / data.len() as f64)
}

/// Average fitted outcome when every unit receives `variant`.
pub fn eval_fixed_prediction(fit: &EffectsFit, data: &Dataset, variant: &Variant) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InsufficientData("empty dataset".into()));
    }
    let mut total = 0.0;
    for r in data.records() {
        let x = fit.covariates_of(data, r)?;
        total += fit.predict_outcome(variant, fit.has_covariates().then_some(x.as_slice()))?;
    }
    Ok(total / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EruptReport {
    pub value: f64,
    pub n: usize,
    pub matched: usize,
    /// Units whose proposed variant is not an arm of the design.
    pub unavailable: usize,
}

impl fmt::Display for EruptReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ERUPT {:.6} over {} units ({} matched, {} proposed variants not in the design)",
            self.value, self.n, self.matched, self.unavailable
        )
    }
}

/// Inverse-propensity estimate of the mean outcome under `policy`, which
/// maps a unit's covariates (schema order) to a variant.
pub fn erupt(data: &Dataset, policy: impl Fn(&[f64]) -> Variant) -> Result<EruptReport> {
    let design = data.design();
    let mut sum = 0.0;
    let (mut n, mut matched, mut unavailable) = (0, 0, 0);
    for r in data.records() {
        let Some(y) = r.outcome else { continue };
        n += 1;
        let proposed = policy(&r.covariates);
        if design.run_for(&proposed).is_none() {
            unavailable += 1;
            continue;
        }
        if proposed == r.assigned {
            if r.propensity.is_nan() || r.propensity <= 0.0 {
                return Err(Error::InvalidPropensity { unit_id: r.unit_id.clone(), value: r.propensity });
            }
            matched += 1;
            sum += y / r.propensity;
        }
    }
    if n == 0 {
        return Err(Error::InsufficientData("no observed outcomes".into()));
    }
    Ok(EruptReport { value: sum / n as f64, n, matched, unavailable })
}

/// Policy closure that serves each unit its fitted optimal variant.
pub fn personalized_policy<'a>(fit: &'a EffectsFit, data: &Dataset) -> Result<impl Fn(&[f64]) -> Variant + 'a> {
    let idx = data.covariate_indices(fit.covariates())?;
    Ok(move |x: &[f64]| {
        let sub: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
        optimal_personalized(fit, &sub).expect("covariate count checked")
    })
}
