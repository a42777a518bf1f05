//! Linear main-effects and heterogeneous-effects models.
//!
//! The outcome is regressed on an intercept, dropped-baseline level dummies,
//! raw covariates and dummy×covariate products:
//!
//! ```text
//! Y = b0 + Σ β_fl W_fl + γ'X + Σ W_fl λ_fl'X + ε
//! ```
//!
//! Fits use a Householder QR of the design matrix; the normal equations are
//! never formed. Inference is classical homoskedastic OLS unless the robust
//! (HC1) option is requested.

use std::collections::HashSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, UnitRecord};
use crate::design::RunRole;
use crate::error::{Error, Result};
use crate::factor_space::{FactorSpace, Variant};
use crate::special::{f_upper_p, t_two_sided_p};

/// Identifies one model coefficient. Covariate indices refer to the fit's
/// own covariate list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefKey {
    Intercept,
    Level { factor: usize, level: usize },
    Covariate(usize),
    Interaction { factor: usize, level: usize, covariate: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub covariance: DMatrix<f64>,
    pub residual_sd: f64,
    pub dof: usize,
    pub n_used: usize,
    pub robust: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectsFit {
    space: FactorSpace,
    covariates: Vec<String>,
    keys: Vec<CoefKey>,
    coef: Vec<f64>,
    inference: Option<Inference>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FitOptions {
    /// Heteroskedasticity-robust (HC1) covariance instead of classical OLS.
    pub robust: bool,
    /// Fit on z-scored covariates for conditioning; coefficients are mapped
    /// back to raw covariate units before returning.
    pub standardize: bool,
}

/// One line of the coefficient table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefRow {
    pub name: String,
    pub coef: f64,
    pub std_err: Option<f64>,
    pub t: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointTestResult {
    pub statistic: f64,
    pub dof_numerator: usize,
    pub dof_denominator: Option<usize>,
    pub p_value: f64,
    pub restriction_count: usize,
}

/// Canonical coefficient order: intercept, level dummies, covariates,
/// then interactions (factor, level, covariate).
pub fn model_keys(space: &FactorSpace, covariate_count: usize) -> Vec<CoefKey> {
    let mut keys = vec![CoefKey::Intercept];
    let levels: Vec<(usize, usize)> = space
        .factors()
        .iter()
        .enumerate()
        .flat_map(|(f, fac)| fac.non_baseline_levels().map(move |l| (f, l)))
        .collect();
    keys.extend(levels.iter().map(|&(factor, level)| CoefKey::Level { factor, level }));
    keys.extend((0..covariate_count).map(CoefKey::Covariate));
    for &(factor, level) in &levels {
        for covariate in 0..covariate_count {
            keys.push(CoefKey::Interaction { factor, level, covariate });
        }
    }
    keys
}

impl EffectsFit {
    /// Builds a fit from known coefficients (no inference). Keys absent from
    /// `values` are zero.
    pub fn from_coefficients(
        space: FactorSpace,
        covariates: Vec<String>,
        values: Vec<(CoefKey, f64)>,
    ) -> Result<Self> {
        let keys = model_keys(&space, covariates.len());
        let mut coef = vec![0.0; keys.len()];
        let mut seen = HashSet::new();
        for (key, value) in values {
            let idx = keys
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| Error::UnknownCoefficient(format!("{key:?}")))?;
            if !seen.insert(idx) {
                return Err(Error::InvalidParameter(format!("coefficient {key:?} given twice")));
            }
            coef[idx] = value;
        }
        Ok(EffectsFit {
            space,
            covariates,
            keys,
            coef,
            inference: None,
        })
    }

    pub fn space(&self) -> &FactorSpace {
        &self.space
    }

    pub fn covariates(&self) -> &[String] {
        &self.covariates
    }

    pub fn keys(&self) -> &[CoefKey] {
        &self.keys
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coef
    }

    pub fn inference(&self) -> Option<&Inference> {
        self.inference.as_ref()
    }

    pub fn has_covariates(&self) -> bool {
        !self.covariates.is_empty()
    }

    pub fn key_index(&self, key: &CoefKey) -> Option<usize> {
        self.keys.iter().position(|k| k == key)
    }

    fn value(&self, key: CoefKey) -> f64 {
        self.key_index(&key).map(|i| self.coef[i]).unwrap_or(0.0)
    }

    pub fn intercept(&self) -> f64 {
        self.value(CoefKey::Intercept)
    }

    /// Main effect of `level` of `factor`; zero for the baseline.
    pub fn beta(&self, factor: usize, level: usize) -> f64 {
        self.value(CoefKey::Level { factor, level })
    }

    pub fn gamma(&self, covariate: usize) -> f64 {
        self.value(CoefKey::Covariate(covariate))
    }

    pub fn lambda(&self, factor: usize, level: usize, covariate: usize) -> f64 {
        self.value(CoefKey::Interaction { factor, level, covariate })
    }

    /// β_fl + λ_fl'x, the level's contribution at covariates `x`.
    pub fn level_score(&self, factor: usize, level: usize, x: Option<&[f64]>) -> f64 {
        let mut s = self.beta(factor, level);
        if let Some(x) = x {
            for (c, xc) in x.iter().enumerate() {
                s += self.lambda(factor, level, c) * xc;
            }
        }
        s
    }

    pub fn label(&self, key: &CoefKey) -> String {
        let lvl = |f: usize, l: usize| {
            let fac = self.space.factor(f);
            format!("{}[{}]", fac.name(), fac.levels()[l])
        };
        match *key {
            CoefKey::Intercept => "Intercept".to_string(),
            CoefKey::Level { factor, level } => lvl(factor, level),
            CoefKey::Covariate(c) => self.covariates[c].clone(),
            CoefKey::Interaction { factor, level, covariate } => {
                format!("{}:{}", lvl(factor, level), self.covariates[covariate])
            }
        }
    }

    pub fn labels(&self) -> Vec<String> {
        self.keys.iter().map(|k| self.label(k)).collect()
    }

    /// Keys of every interaction term, optionally only those on one covariate.
    pub fn interaction_keys(&self, covariate: Option<usize>) -> Vec<CoefKey> {
        self.keys
            .iter()
            .filter(|k| match k {
                CoefKey::Interaction { covariate: c, .. } => covariate.is_none_or(|want| *c == want),
                _ => false,
            })
            .copied()
            .collect()
    }

    fn check_x<'a>(&self, x: Option<&'a [f64]>) -> Result<Option<&'a [f64]>> {
        if self.covariates.is_empty() {
            return Ok(None);
        }
        let x = x.ok_or_else(|| Error::MissingCovariate(self.covariates.join(", ")))?;
        if x.len() != self.covariates.len() {
            return Err(Error::DimensionMismatch {
                expected: self.covariates.len(),
                actual: x.len(),
            });
        }
        Ok(Some(x))
    }

    /// Design-matrix row for a variant at covariates `x`, in key order.
    pub fn regressor_row(&self, variant: &Variant, x: Option<&[f64]>) -> Result<Vec<f64>> {
        self.space.validate_variant(variant)?;
        let x = self.check_x(x)?;
        Ok(build_row(&self.keys, variant, x.unwrap_or(&[])))
    }

    pub fn predict_outcome(&self, variant: &Variant, x: Option<&[f64]>) -> Result<f64> {
        let row = self.regressor_row(variant, x)?;
        Ok(row.iter().zip(&self.coef).map(|(a, b)| a * b).sum())
    }

    /// predict_outcome(a) − predict_outcome(b); intercept and γ'x cancel.
    pub fn predict_effect(&self, a: &Variant, b: &Variant, x: Option<&[f64]>) -> Result<f64> {
        self.space.validate_variant(a)?;
        self.space.validate_variant(b)?;
        let x = self.check_x(x)?;
        let mut total = 0.0;
        for f in 0..self.space.factor_count() {
            let (la, lb) = (a.level(f), b.level(f));
            if la != lb {
                total += self.level_score(f, la, x) - self.level_score(f, lb, x);
            }
        }
        Ok(total)
    }

    pub fn standard_errors(&self) -> Option<Vec<f64>> {
        self.inference.as_ref().map(|inf| {
            (0..self.coef.len())
                .map(|i| inf.covariance[(i, i)].max(0.0).sqrt())
                .collect()
        })
    }

    pub fn coefficient_table(&self) -> Vec<CoefRow> {
        let se = self.standard_errors();
        let dof = self.inference.as_ref().map(|i| i.dof as f64);
        self.keys
            .iter()
            .enumerate()
            .map(|(i, k)| {
                let s = se.as_ref().map(|s| s[i]);
                let t = s.map(|s| self.coef[i] / s);
                let p = match (t, dof) {
                    (Some(t), Some(d)) => Some(t_two_sided_p(t, d)),
                    _ => None,
                };
                CoefRow {
                    name: self.label(k),
                    coef: self.coef[i],
                    std_err: s,
                    t,
                    p_value: p,
                }
            })
            .collect()
    }

    /// Wald F test that every selected coefficient is zero.
    pub fn joint_test(&self, selector: &[CoefKey]) -> Result<JointTestResult> {
        if selector.is_empty() {
            return Err(Error::InvalidParameter("joint test needs at least one coefficient".into()));
        }
        let inf = self
            .inference
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("fit carries no covariance".into()))?;
        let mut idx = Vec::with_capacity(selector.len());
        for k in selector {
            let i = self
                .key_index(k)
                .ok_or_else(|| Error::UnknownCoefficient(format!("{k:?}")))?;
            if idx.contains(&i) {
                return Err(Error::InvalidParameter(format!("{} selected twice", self.label(k))));
            }
            idx.push(i);
        }
        let q = idx.len();
        let b = DVector::from_iterator(q, idx.iter().map(|&i| self.coef[i]));
        let v = DMatrix::from_fn(q, q, |r, c| inf.covariance[(idx[r], idx[c])]);
        let chol = v.clone().cholesky().ok_or_else(|| {
            Error::SingularCovariance("selected covariance block is not positive definite".into())
        })?;
        let quad = b.dot(&chol.solve(&b));
        let statistic = (quad / q as f64).max(0.0);
        Ok(JointTestResult {
            statistic,
            dof_numerator: q,
            dof_denominator: Some(inf.dof),
            p_value: f_upper_p(statistic, q as f64, inf.dof as f64),
            restriction_count: q,
        })
    }

    /// Covariate vector in this fit's order, looked up by name.
    pub fn covariate_vector<'a>(
        &self,
        lookup: impl Fn(&str) -> Option<f64> + 'a,
    ) -> Result<Vec<f64>> {
        self.covariates
            .iter()
            .map(|c| lookup(c).ok_or_else(|| Error::MissingCovariate(c.clone())))
            .collect()
    }

    /// Projects a unit's schema-ordered covariates onto this fit's covariates.
    pub fn covariates_of(&self, data: &Dataset, record: &UnitRecord) -> Result<Vec<f64>> {
        let idx = data.covariate_indices(&self.covariates)?;
        Ok(idx.iter().map(|&i| record.covariates[i]).collect())
    }
}

impl fmt::Display for EffectsFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows = self.coefficient_table();
        let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(8).max(13);
        writeln!(
            f,
            "{:<width$} {:>11} {:>11} {:>9} {:>8}",
            "Variable Name", "Coef", "Std err", "t", "P>|t|"
        )?;
        let opt = |v: Option<f64>, prec: usize| match v {
            Some(v) => format!("{v:.prec$}"),
            None => "-".into(),
        };
        for r in rows {
            writeln!(
                f,
                "{:<width$} {:>11.5} {:>11} {:>9} {:>8}",
                r.name,
                r.coef,
                opt(r.std_err, 5),
                opt(r.t, 3),
                opt(r.p_value, 3)
            )?;
        }
        if let Some(inf) = &self.inference {
            writeln!(
                f,
                "n = {}, dof = {}, residual sd = {:.5}{}",
                inf.n_used,
                inf.dof,
                inf.residual_sd,
                if inf.robust { ", HC1 covariance" } else { "" }
            )?;
        }
        Ok(())
    }
}

fn build_row(keys: &[CoefKey], variant: &Variant, x: &[f64]) -> Vec<f64> {
    keys.iter()
        .map(|k| match *k {
            CoefKey::Intercept => 1.0,
            CoefKey::Level { factor, level } => f64::from(u8::from(variant.level(factor) == level)),
            CoefKey::Covariate(c) => x[c],
            CoefKey::Interaction { factor, level, covariate } => {
                if variant.level(factor) == level {
                    x[covariate]
                } else {
                    0.0
                }
            }
        })
        .collect()
}

/// Output of [`least_squares`].
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coef: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub residuals: DVector<f64>,
    pub residual_sd: f64,
    pub dof: usize,
}

/// OLS by Householder QR. Columns whose component orthogonal to the
/// preceding columns vanishes are reported by label as collinear.
pub fn least_squares(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    labels: &[String],
    robust: bool,
) -> Result<LeastSquares> {
    let (n, k) = x.shape();
    if n <= k {
        return Err(Error::InsufficientData(format!(
            "{n} observations for {k} coefficients; need more observations than coefficients"
        )));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let mut collinear = Vec::new();
    for j in 0..k {
        let norm = x.column(j).norm();
        if norm == 0.0 || r[(j, j)].abs() <= 1e-10 * norm {
            collinear.push(labels.get(j).cloned().unwrap_or_else(|| format!("column {j}")));
        }
    }
    if !collinear.is_empty() {
        return Err(Error::RankDeficient(collinear));
    }
    let q = qr.q();
    let qty = q.transpose() * y;
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::RankDeficient(vec!["triangular solve failed".into()]))?;
    let residuals = y - x * &coef;
    let dof = n - k;
    let rss = residuals.norm_squared();
    let sigma2 = rss / dof as f64;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::RankDeficient(vec!["triangular inverse failed".into()]))?;
    let bread = &r_inv * r_inv.transpose();
    let covariance = if robust {
        let mut meat = DMatrix::zeros(k, k);
        for i in 0..n {
            let row = x.row(i);
            let e2 = residuals[i] * residuals[i];
            meat += row.transpose() * row * e2;
        }
        (&bread * meat * &bread) * (n as f64 / dof as f64)
    } else {
        bread * sigma2
    };
    let covariance = (&covariance + covariance.transpose()) * 0.5;
    Ok(LeastSquares {
        coef,
        covariance,
        residuals,
        residual_sd: sigma2.sqrt(),
        dof,
    })
}

/// Training rows: in-sample units with an observed outcome.
pub fn training_records(data: &Dataset) -> Result<Vec<&UnitRecord>> {
    let design = data.design();
    for run in design.in_sample_runs() {
        if data.arm(&run.variant).next().is_none() {
            return Err(Error::InsufficientData(format!(
                "in-sample run {} has no unit with an observed outcome",
                design.space().variant_label(&run.variant)
            )));
        }
    }
    Ok(data
        .records()
        .iter()
        .filter(|r| r.outcome.is_some() && data.role_of(r) == RunRole::InSample)
        .collect())
}

pub fn fit_main_effects(data: &Dataset) -> Result<EffectsFit> {
    fit_hte_with::<&str>(data, &[], FitOptions::default())
}

pub fn fit_hte<S: AsRef<str>>(data: &Dataset, covariates: &[S]) -> Result<EffectsFit> {
    fit_hte_with(data, covariates, FitOptions::default())
}

/// Least-squares fit of the interaction model on in-sample units; holdout and
/// control arms are excluded.
pub fn fit_hte_with<S: AsRef<str>>(
    data: &Dataset,
    covariates: &[S],
    options: FitOptions,
) -> Result<EffectsFit> {
    let names: Vec<String> = covariates.iter().map(|s| s.as_ref().to_string()).collect();
    let mut uniq = HashSet::new();
    for n in &names {
        if !uniq.insert(n) {
            return Err(Error::InvalidParameter(format!("covariate `{n}` listed twice")));
        }
    }
    let cov_idx = data.covariate_indices(&names)?;
    let rows = training_records(data)?;
    let space = data.design().space().clone();
    let keys = model_keys(&space, names.len());
    let n = rows.len();
    let k = keys.len();

    let c = names.len();
    let (means, sds) = if options.standardize && c > 0 {
        let mut means = vec![0.0; c];
        for r in &rows {
            for (j, &i) in cov_idx.iter().enumerate() {
                means[j] += r.covariates[i];
            }
        }
        means.iter_mut().for_each(|m| *m /= n.max(1) as f64);
        let mut sds = vec![0.0; c];
        for r in &rows {
            for (j, &i) in cov_idx.iter().enumerate() {
                sds[j] += (r.covariates[i] - means[j]).powi(2);
            }
        }
        let sds = sds
            .into_iter()
            .map(|s| {
                let sd = (s / (n.max(2) - 1) as f64).sqrt();
                if sd > 0.0 { sd } else { 1.0 }
            })
            .collect();
        (means, sds)
    } else {
        (vec![0.0; c], vec![1.0; c])
    };

    let mut xm = DMatrix::zeros(n, k);
    let mut y = DVector::zeros(n);
    let mut xrow = vec![0.0; c];
    for (i, r) in rows.iter().enumerate() {
        for (j, &ci) in cov_idx.iter().enumerate() {
            xrow[j] = (r.covariates[ci] - means[j]) / sds[j];
        }
        for (j, v) in build_row(&keys, &r.assigned, &xrow).into_iter().enumerate() {
            xm[(i, j)] = v;
        }
        y[i] = r.outcome.expect("training rows have outcomes");
    }
    let proto = EffectsFit {
        space: space.clone(),
        covariates: names.clone(),
        keys: keys.clone(),
        coef: vec![0.0; k],
        inference: None,
    };
    let ls = least_squares(&xm, &y, &proto.labels(), options.robust)?;

    let (coef, covariance) = if options.standardize && c > 0 {
        let a = destandardize_map(&keys, &means, &sds);
        (&a * &ls.coef, &a * &ls.covariance * a.transpose())
    } else {
        (ls.coef.clone(), ls.covariance.clone())
    };
    Ok(EffectsFit {
        inference: Some(Inference {
            covariance,
            residual_sd: ls.residual_sd,
            dof: ls.dof,
            n_used: n,
            robust: options.robust,
        }),
        coef: coef.iter().copied().collect(),
        ..proto
    })
}

/// Linear map from z-scored-covariate coefficients to raw-unit coefficients.
fn destandardize_map(keys: &[CoefKey], means: &[f64], sds: &[f64]) -> DMatrix<f64> {
    let k = keys.len();
    let mut a = DMatrix::identity(k, k);
    let pos = |key: CoefKey| keys.iter().position(|k| *k == key).expect("key present");
    for (j, key) in keys.iter().enumerate() {
        match *key {
            CoefKey::Covariate(c) => {
                a[(j, j)] = 1.0 / sds[c];
                a[(pos(CoefKey::Intercept), j)] = -means[c] / sds[c];
            }
            CoefKey::Interaction { factor, level, covariate } => {
                a[(j, j)] = 1.0 / sds[covariate];
                a[(pos(CoefKey::Level { factor, level }), j)] = -means[covariate] / sds[covariate];
            }
            _ => {}
        }
    }
    a
}
