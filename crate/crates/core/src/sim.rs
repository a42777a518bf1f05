//! Synthetic experiments with known ground truth.
//!
//! Outcomes follow
//!
//! ```text
//! Y = b0 + Σ β_f(l_f) + Σ β_{f1 l1, f2 l2} + γ'X + Σ_f λ_f(l_f)'X + ε,  ε ~ N(0, σ²)
//! ```
//!
//! with two-factor interaction terms optional. All randomness comes from
//! streams derived from the config seed.

use rand::Rng;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{randomize, Dataset, Unit};
use crate::design::{full_factorial, Design};
use crate::error::{Error, Result};
use crate::estimate::{CoefKey, EffectsFit};
use crate::factor_space::{FactorSpace, Variant};
use crate::rng::{stream, Stream};
use crate::special::t_two_sided_p;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateDist {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, sd: f64 },
    /// exp(N(mu, sigma²)); the median is exp(mu).
    Lognormal { mu: f64, sigma: f64 },
}

impl CovariateDist {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            CovariateDist::Uniform { low, high } => low.is_finite() && high.is_finite() && low < high,
            CovariateDist::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
            CovariateDist::Lognormal { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("bad covariate distribution {self:?}")))
        }
    }

    fn sample_n(&self, rng: &mut impl Rng, n: usize) -> Vec<f64> {
        match *self {
            CovariateDist::Uniform { low, high } => {
                let d = Uniform::new(low, high).expect("validated");
                (0..n).map(|_| d.sample(rng)).collect()
            }
            CovariateDist::Normal { mean, sd } => {
                let d = Normal::new(mean, sd).expect("validated");
                (0..n).map(|_| d.sample(rng)).collect()
            }
            CovariateDist::Lognormal { mu, sigma } => {
                let d = LogNormal::new(mu, sigma).expect("validated");
                (0..n).map(|_| d.sample(rng)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovariateSpec {
    pub name: String,
    pub dist: CovariateDist,
    /// Main covariate coefficient γ.
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairInteraction {
    pub factor_a: usize,
    pub level_a: usize,
    pub factor_b: usize,
    pub level_b: usize,
    pub value: f64,
}

/// Ground-truth data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SimConfigDoc", into = "SimConfigDoc")]
pub struct SimConfig {
    space: FactorSpace,
    intercept: f64,
    /// beta[f][l]; baseline entries are 0.
    beta: Vec<Vec<f64>>,
    interactions: Vec<PairInteraction>,
    covariates: Vec<CovariateSpec>,
    /// lambda[f][l][c]; baseline entries are 0.
    lambda: Vec<Vec<Vec<f64>>>,
    noise_sd: f64,
    seed: u64,
}

impl SimConfig {
    /// Zero-effect additive config with no covariates.
    pub fn new(space: FactorSpace, intercept: f64, noise_sd: f64, seed: u64) -> Result<Self> {
        if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise_sd = {noise_sd} must be finite and ≥ 0")));
        }
        let beta = space.factors().iter().map(|f| vec![0.0; f.level_count()]).collect();
        let lambda = space.factors().iter().map(|f| vec![Vec::new(); f.level_count()]).collect();
        Ok(SimConfig {
            space,
            intercept,
            beta,
            interactions: Vec::new(),
            covariates: Vec::new(),
            lambda,
            noise_sd,
            seed,
        })
    }

    fn check_range(&self, factor: usize, level: usize) -> Result<()> {
        if factor >= self.space.factor_count() || level >= self.space.factor(factor).level_count() {
            return Err(Error::InvalidParameter(format!("no level {level} of factor {factor}")));
        }
        Ok(())
    }

    fn check_level(&self, factor: usize, level: usize) -> Result<()> {
        self.check_range(factor, level)?;
        if level == self.space.factor(factor).baseline_index() {
            return Err(Error::InvalidParameter(format!(
                "effects of the baseline level of `{}` are fixed at 0",
                self.space.factor(factor).name()
            )));
        }
        Ok(())
    }

    pub fn with_beta(mut self, factor: usize, level: usize, value: f64) -> Result<Self> {
        self.check_level(factor, level)?;
        self.beta[factor][level] = value;
        Ok(self)
    }

    pub fn with_interaction(mut self, term: PairInteraction) -> Result<Self> {
        if term.factor_a == term.factor_b {
            return Err(Error::InvalidParameter("an interaction needs two distinct factors".into()));
        }
        // baseline levels are allowed: the term is an indicator product
        self.check_range(term.factor_a, term.level_a)?;
        self.check_range(term.factor_b, term.level_b)?;
        self.interactions.push(term);
        Ok(self)
    }

    pub fn with_covariate(mut self, name: &str, dist: CovariateDist, gamma: f64) -> Result<Self> {
        dist.validate()?;
        if self.covariates.iter().any(|c| c.name == name) {
            return Err(Error::InvalidParameter(format!("covariate `{name}` declared twice")));
        }
        self.covariates.push(CovariateSpec { name: name.to_string(), dist, gamma });
        for per_factor in &mut self.lambda {
            for per_level in per_factor.iter_mut() {
                per_level.push(0.0);
            }
        }
        Ok(self)
    }

    pub fn with_lambda(mut self, factor: usize, level: usize, covariate: usize, value: f64) -> Result<Self> {
        self.check_level(factor, level)?;
        if covariate >= self.covariates.len() {
            return Err(Error::MissingCovariate(format!("covariate #{covariate}")));
        }
        self.lambda[factor][level][covariate] = value;
        Ok(self)
    }

    pub fn with_noise_sd(mut self, noise_sd: f64) -> Result<Self> {
        if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise_sd = {noise_sd} must be finite and ≥ 0")));
        }
        self.noise_sd = noise_sd;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Truth taken from a fitted (or fixture) model, with the given covariate
    /// distributions in the fit's covariate order.
    pub fn from_fit(fit: &EffectsFit, dists: &[CovariateDist], noise_sd: f64, seed: u64) -> Result<Self> {
        if dists.len() != fit.covariates().len() {
            return Err(Error::DimensionMismatch { expected: fit.covariates().len(), actual: dists.len() });
        }
        let mut cfg = SimConfig::new(fit.space().clone(), fit.intercept(), noise_sd, seed)?;
        for (c, (name, d)) in fit.covariates().iter().zip(dists).enumerate() {
            cfg = cfg.with_covariate(name, *d, fit.gamma(c))?;
        }
        for key in fit.keys() {
            match *key {
                CoefKey::Level { factor, level } => cfg = cfg.with_beta(factor, level, fit.beta(factor, level))?,
                CoefKey::Interaction { factor, level, covariate } => {
                    cfg = cfg.with_lambda(factor, level, covariate, fit.lambda(factor, level, covariate))?
                }
                _ => {}
            }
        }
        Ok(cfg)
    }

    pub fn space(&self) -> &FactorSpace {
        &self.space
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    pub fn covariates(&self) -> &[CovariateSpec] {
        &self.covariates
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.covariates.iter().map(|c| c.name.clone()).collect()
    }

    pub fn interactions(&self) -> &[PairInteraction] {
        &self.interactions
    }

    pub fn is_additive(&self) -> bool {
        self.interactions.iter().all(|t| t.value == 0.0)
    }

    fn has_lambda(&self) -> bool {
        self.lambda.iter().flatten().flatten().any(|v| *v != 0.0)
    }

    /// The truth as a linear model, when it has no factor interactions.
    pub fn truth_fit(&self) -> Option<EffectsFit> {
        if !self.is_additive() {
            return None;
        }
        let mut coef = vec![(CoefKey::Intercept, self.intercept)];
        for (f, fac) in self.space.factors().iter().enumerate() {
            for l in fac.non_baseline_levels() {
                coef.push((CoefKey::Level { factor: f, level: l }, self.beta[f][l]));
                for c in 0..self.covariates.len() {
                    coef.push((CoefKey::Interaction { factor: f, level: l, covariate: c }, self.lambda[f][l][c]));
                }
            }
        }
        for (c, spec) in self.covariates.iter().enumerate() {
            coef.push((CoefKey::Covariate(c), spec.gamma));
        }
        EffectsFit::from_coefficients(self.space.clone(), self.covariate_names(), coef).ok()
    }

    /// Noise-free expected outcome of `variant` at covariates `x`.
    pub fn mean_outcome(&self, variant: &Variant, x: &[f64]) -> f64 {
        let mut y = self.intercept;
        for (f, &l) in variant.levels().iter().enumerate() {
            y += self.beta[f][l];
            for (c, xc) in x.iter().enumerate() {
                y += self.lambda[f][l][c] * xc;
            }
        }
        for t in &self.interactions {
            if variant.level(t.factor_a) == t.level_a && variant.level(t.factor_b) == t.level_b {
                y += t.value;
            }
        }
        for (spec, xc) in self.covariates.iter().zip(x) {
            y += spec.gamma * xc;
        }
        y
    }

    /// Draws `n` units with ids `u0000000`, `u0000001`, ….
    pub fn draw_units(&self, n: usize) -> Vec<Unit> {
        let columns: Vec<Vec<f64>> = self
            .covariates
            .iter()
            .enumerate()
            .map(|(c, spec)| spec.dist.sample_n(&mut stream(self.seed, Stream::Covariates, c as u32), n))
            .collect();
        (0..n)
            .map(|i| Unit {
                unit_id: format!("u{i:07}"),
                covariates: columns.iter().map(|col| col[i]).collect(),
            })
            .collect()
    }
}

/// Exact effect of `a` over `b` under the configured truth. `x` is needed
/// only when effects vary with covariates.
pub fn oracle_effect(config: &SimConfig, a: &Variant, b: &Variant, x: Option<&[f64]>) -> Result<f64> {
    config.space.validate_variant(a)?;
    config.space.validate_variant(b)?;
    let zeros = vec![0.0; config.covariates.len()];
    let x = match x {
        Some(x) if x.len() == config.covariates.len() => x,
        Some(x) => return Err(Error::DimensionMismatch { expected: config.covariates.len(), actual: x.len() }),
        None if config.has_lambda() => {
            return Err(Error::MissingCovariate(config.covariate_names().join(", ")))
        }
        None => &zeros,
    };
    Ok(config.mean_outcome(a, x) - config.mean_outcome(b, x))
}

/// Draws units, randomizes them over `design` and attaches outcomes.
pub fn generate(config: &SimConfig, design: &Design, n_units: usize) -> Result<Dataset> {
    if design.space() != &config.space {
        return Err(Error::InvalidDesign("design and config use different factor spaces".into()));
    }
    let units = config.draw_units(n_units);
    let data = randomize(units, config.covariate_names(), design, config.seed)?;
    let mut noise = stream(config.seed, Stream::Noise, 0);
    let outcomes = data
        .records()
        .iter()
        .map(|r| {
            let e: f64 = noise.sample(StandardNormal);
            Some(config.mean_outcome(&r.assigned, &r.covariates) + config.noise_sd * e)
        })
        .collect();
    data.with_outcomes(outcomes)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameworkComparison {
    pub replications: usize,
    pub total_units: usize,
    /// Policy contrast being estimated: every factor at its first
    /// non-baseline level versus the all-baseline variant.
    pub target: Variant,
    pub true_contrast: f64,
    pub abn_mean: f64,
    pub abn_variance: f64,
    pub factorial_mean: f64,
    pub factorial_variance: f64,
    pub empirical_ratio: f64,
    pub theoretical_ratio: f64,
}

/// Monte Carlo comparison of the A/B/n cell contrast with the factorial
/// summed main-effect contrast, both from a balanced full factorial of
/// `total_units` units.
pub fn compare_frameworks(config: &SimConfig, total_units: usize, replications: usize) -> Result<FrameworkComparison> {
    if !config.is_additive() || config.has_lambda() {
        return Err(Error::InvalidParameter("framework comparison needs an additive config".into()));
    }
    if replications < 2 {
        return Err(Error::InvalidParameter("need at least 2 replications".into()));
    }
    let space = &config.space;
    let variants = space.enumerate_variants();
    let cells = variants.len();
    if total_units < 2 * cells {
        return Err(Error::InsufficientData(format!("{total_units} units cannot fill {cells} cells twice")));
    }
    let base = space.baseline_variant();
    let target = Variant::new(
        space
            .factors()
            .iter()
            .map(|f| f.non_baseline_levels().next().unwrap_or(f.baseline_index()))
            .collect(),
    );
    let target_idx = variants.iter().position(|v| *v == target).expect("target enumerated");
    let base_idx = variants.iter().position(|v| *v == base).expect("baseline enumerated");
    let true_contrast = oracle_effect(config, &target, &base, None)?;

    // balanced assignment: unit i goes to cell i mod cells
    let per_cell: Vec<usize> = (0..cells).map(|c| total_units / cells + usize::from(c < total_units % cells)).collect();
    let estimates: Vec<(f64, f64)> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream(config.seed, Stream::Replication, rep as u32);
            let cov_cols: Vec<Vec<f64>> = config
                .covariates
                .iter()
                .map(|spec| spec.dist.sample_n(&mut rng, total_units))
                .collect();
            let mut sums = vec![0.0; cells];
            let mut unit = 0;
            for (c, &n) in per_cell.iter().enumerate() {
                for _ in 0..n {
                    let x: Vec<f64> = cov_cols.iter().map(|col| col[unit]).collect();
                    let e: f64 = rng.sample(StandardNormal);
                    sums[c] += config.mean_outcome(&variants[c], &x) + config.noise_sd * e;
                    unit += 1;
                }
            }
            let means: Vec<f64> = sums.iter().zip(&per_cell).map(|(s, &n)| s / n as f64).collect();
            let abn = means[target_idx] - means[base_idx];
            let mut factorial = 0.0;
            for (f, fac) in space.factors().iter().enumerate() {
                let level_mean = |l: usize| {
                    let (mut s, mut n) = (0.0, 0usize);
                    for (c, v) in variants.iter().enumerate() {
                        if v.level(f) == l {
                            s += sums[c];
                            n += per_cell[c];
                        }
                    }
                    s / n as f64
                };
                factorial += level_mean(target.level(f)) - level_mean(fac.baseline_index());
            }
            (abn, factorial)
        })
        .collect();
    let stats = |xs: Vec<f64>| {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    };
    let (abn_mean, abn_variance) = stats(estimates.iter().map(|e| e.0).collect());
    let (factorial_mean, factorial_variance) = stats(estimates.iter().map(|e| e.1).collect());
    Ok(FrameworkComparison {
        replications,
        total_units,
        target,
        true_contrast,
        abn_mean,
        abn_variance,
        factorial_mean,
        factorial_variance,
        empirical_ratio: factorial_variance / abn_variance,
        theoretical_ratio: space.level_sum() as f64 / cells as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RolloutReport {
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub difference: f64,
    pub std_err: f64,
    pub p_value: f64,
}

/// Fresh two-arm experiment: units split 50/50, arm A served `policy_a(x)`
/// and arm B `policy_b(x)`. Covariates are passed in config order.
pub fn rollout_experiment(
    config: &SimConfig,
    policy_a: impl Fn(&[f64]) -> Variant,
    policy_b: impl Fn(&[f64]) -> Variant,
    n_units: usize,
    seed: u64,
) -> Result<RolloutReport> {
    if n_units < 4 {
        return Err(Error::InsufficientData("rollout needs at least 4 units".into()));
    }
    let cfg = config.clone().with_seed(seed);
    let units = cfg.draw_units(n_units);
    let mut order: Vec<usize> = (0..n_units).collect();
    order.shuffle(&mut stream(seed, Stream::Rollout, 0));
    let mut noise = stream(seed, Stream::Rollout, 1);
    let (mut ya, mut yb) = (Vec::new(), Vec::new());
    for (pos, &i) in order.iter().enumerate() {
        let x = &units[i].covariates;
        let in_a = pos < n_units / 2;
        let v = if in_a { policy_a(x) } else { policy_b(x) };
        cfg.space.validate_variant(&v)?;
        let e: f64 = noise.sample(StandardNormal);
        let y = cfg.mean_outcome(&v, x) + cfg.noise_sd * e;
        if in_a { ya.push(y) } else { yb.push(y) }
    }
    let stats = |ys: &[f64]| {
        let n = ys.len() as f64;
        let m = ys.iter().sum::<f64>() / n;
        (m, ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (n - 1.0))
    };
    let ((ma, va), (mb, vb)) = (stats(&ya), stats(&yb));
    let diff = ma - mb;
    let se = (va / ya.len() as f64 + vb / yb.len() as f64).sqrt();
    let p_value = if se > 0.0 {
        t_two_sided_p(diff / se, (ya.len() + yb.len() - 2) as f64)
    } else if diff == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(RolloutReport {
        n_a: ya.len(),
        n_b: yb.len(),
        mean_a: ma,
        mean_b: mb,
        difference: diff,
        std_err: se,
        p_value,
    })
}

/// Default case-study analogue configuration: spend-interaction truth, average
/// order spend lognormal with median 25.
pub const PAPER_ANALOGUE_TOML: &str = include_str!("../configs/paper_analogue.toml");

pub fn paper_analogue() -> SimConfig {
    SimConfig::from_toml_str(PAPER_ANALOGUE_TOML).expect("bundled config parses")
}

/// Full factorial over the config's space; handy for simulations.
pub fn full_design(config: &SimConfig) -> Design {
    full_factorial(&config.space)
}

// ---- file format ----------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EffectDoc {
    factor: String,
    level: String,
    value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct InteractionDoc {
    factor_a: String,
    level_a: String,
    factor_b: String,
    level_b: String,
    value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CovariateDoc {
    name: String,
    distribution: CovariateDist,
    #[serde(default)]
    gamma: f64,
    /// (factor, level) → λ for this covariate.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    interactions: Vec<EffectDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SimConfigDoc {
    seed: u64,
    noise_sd: f64,
    intercept: f64,
    space: FactorSpace,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    effects: Vec<EffectDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    interactions: Vec<InteractionDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    covariates: Vec<CovariateDoc>,
}

fn level_ref(space: &FactorSpace, factor: &str, level: &str) -> Result<(usize, usize)> {
    let f = space
        .factor_index(factor)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown factor `{factor}`")))?;
    let l = space
        .factor(f)
        .level_index(level)
        .ok_or_else(|| Error::InvalidParameter(format!("unknown level `{level}` of factor `{factor}`")))?;
    Ok((f, l))
}

impl TryFrom<SimConfigDoc> for SimConfig {
    type Error = Error;

    fn try_from(doc: SimConfigDoc) -> Result<Self> {
        let mut cfg = SimConfig::new(doc.space, doc.intercept, doc.noise_sd, doc.seed)?;
        for e in &doc.effects {
            let (f, l) = level_ref(&cfg.space, &e.factor, &e.level)?;
            cfg = cfg.with_beta(f, l, e.value)?;
        }
        for t in &doc.interactions {
            let (fa, la) = level_ref(&cfg.space, &t.factor_a, &t.level_a)?;
            let (fb, lb) = level_ref(&cfg.space, &t.factor_b, &t.level_b)?;
            cfg = cfg.with_interaction(PairInteraction { factor_a: fa, level_a: la, factor_b: fb, level_b: lb, value: t.value })?;
        }
        for (c, cov) in doc.covariates.iter().enumerate() {
            cfg = cfg.with_covariate(&cov.name, cov.distribution, cov.gamma)?;
            for e in &cov.interactions {
                let (f, l) = level_ref(&cfg.space, &e.factor, &e.level)?;
                cfg = cfg.with_lambda(f, l, c, e.value)?;
            }
        }
        Ok(cfg)
    }
}

impl From<SimConfig> for SimConfigDoc {
    fn from(cfg: SimConfig) -> Self {
        let space = &cfg.space;
        let name = |f: usize, l: usize| (space.factor(f).name().to_string(), space.factor(f).levels()[l].clone());
        let mut effects = Vec::new();
        for (f, fac) in space.factors().iter().enumerate() {
            for l in fac.non_baseline_levels() {
                if cfg.beta[f][l] != 0.0 {
                    let (factor, level) = name(f, l);
                    effects.push(EffectDoc { factor, level, value: cfg.beta[f][l] });
                }
            }
        }
        let interactions = cfg
            .interactions
            .iter()
            .map(|t| {
                let (factor_a, level_a) = name(t.factor_a, t.level_a);
                let (factor_b, level_b) = name(t.factor_b, t.level_b);
                InteractionDoc { factor_a, level_a, factor_b, level_b, value: t.value }
            })
            .collect();
        let covariates = cfg
            .covariates
            .iter()
            .enumerate()
            .map(|(c, spec)| {
                let mut inter = Vec::new();
                for (f, fac) in space.factors().iter().enumerate() {
                    for l in fac.non_baseline_levels() {
                        if cfg.lambda[f][l][c] != 0.0 {
                            let (factor, level) = name(f, l);
                            inter.push(EffectDoc { factor, level, value: cfg.lambda[f][l][c] });
                        }
                    }
                }
                CovariateDoc { name: spec.name.clone(), distribution: spec.dist, gamma: spec.gamma, interactions: inter }
            })
            .collect();
        SimConfigDoc {
            seed: cfg.seed,
            noise_sd: cfg.noise_sd,
            intercept: cfg.intercept,
            effects,
            interactions,
            covariates,
            space: cfg.space,
        }
    }
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_study;
    use crate::estimate::fit_main_effects;

    fn additive() -> SimConfig {
        SimConfig::from_fit(&case_study::main_effects_fit(), &[], 0.0, 9).unwrap()
    }

    #[test]
    fn zero_noise_recovers_truth() {
        let cfg = additive();
        let data = generate(&cfg, &case_study::in_sample_design(), 400).unwrap();
        let fit = fit_main_effects(&data).unwrap();
        for (a, b) in fit.coefficients().iter().zip(case_study::MAIN_EFFECTS) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn oracle_effects() {
        let cfg = additive();
        let s = cfg.space().clone();
        let a = s.parse_variant("Upfront,Level3,Weekday,Generic").unwrap();
        let b = s.baseline_variant();
        assert_eq!(oracle_effect(&cfg, &a, &a, None).unwrap(), 0.0);
        let sum = 0.12905 + 0.41950 - 0.01350;
        assert!((oracle_effect(&cfg, &a, &b, None).unwrap() - sum).abs() < 1e-12);
        let inter = cfg
            .with_interaction(PairInteraction { factor_a: 0, level_a: 1, factor_b: 1, level_b: 2, value: 0.5 })
            .unwrap();
        assert!((oracle_effect(&inter, &a, &b, None).unwrap() - sum - 0.5).abs() < 1e-12);
        let c = s.parse_variant("Upfront,Level2,Weekday,Generic").unwrap();
        assert!((oracle_effect(&inter, &c, &b, None).unwrap() - (0.12905 + 0.40757 - 0.01350)).abs() < 1e-12);
    }

    #[test]
    fn baseline_effects_rejected() {
        assert!(additive().with_beta(0, 0, 1.0).is_err());
        assert!(SimConfig::new(case_study::space(), 0.0, -1.0, 1).is_err());
    }

    #[test]
    fn reproducible_and_seed_sensitive() {
        let cfg = paper_analogue();
        let d = full_design(&cfg);
        let a = generate(&cfg, &d, 200).unwrap();
        let b = generate(&cfg, &d, 200).unwrap();
        assert_eq!(a, b);
        let c = generate(&cfg.clone().with_seed(cfg.seed() + 1), &d, 200).unwrap();
        assert_ne!(a.records()[0].outcome, c.records()[0].outcome);
    }

    #[test]
    fn bundled_config_round_trips() {
        let cfg = paper_analogue();
        assert_eq!(cfg.covariate_names(), vec![case_study::SPEND.to_string()]);
        assert_eq!(SimConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
        let truth = cfg.truth_fit().unwrap();
        for (a, b) in truth.coefficients().iter().zip(case_study::spend_model_fit().coefficients()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn comparison_rejects_interactions() {
        let cfg = additive()
            .with_interaction(PairInteraction { factor_a: 0, level_a: 1, factor_b: 1, level_b: 2, value: 0.5 })
            .unwrap();
        assert!(compare_frameworks(&cfg, 480, 10).is_err());
    }

    #[test]
    fn single_factor_comparison_ratio_is_one() {
        let space = FactorSpace::from_level_counts(&[2]).unwrap();
        let cfg = SimConfig::new(space, 0.0, 1.0, 3).unwrap();
        let r = compare_frameworks(&cfg, 100, 50).unwrap();
        assert_eq!(r.theoretical_ratio, 1.0);
        assert!((r.empirical_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_rollout_is_oracle_gap() {
        let cfg = additive();
        let s = cfg.space().clone();
        let a = s.parse_variant("Upfront,Level3,Ongoing,Generic").unwrap();
        let b = s.baseline_variant();
        let r = rollout_experiment(&cfg, |_| a.clone(), |_| b.clone(), 101, 4).unwrap();
        assert_eq!((r.n_a, r.n_b), (50, 51));
        assert!((r.difference - oracle_effect(&cfg, &a, &b, None).unwrap()).abs() < 1e-12);
    }
}
