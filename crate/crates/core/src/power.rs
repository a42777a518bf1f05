//! Sample sizes and the speed advantage of factorial over A/B/n designs.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor_space::FactorSpace;
use crate::special::normal_quantile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSpec {
    pub sigma: f64,
    /// Minimum detectable effect in metric units.
    pub mde: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Use z_{1−α/2} instead of z_{1−α}.
    #[serde(default)]
    pub two_sided: bool,
}

impl PowerSpec {
    pub fn new(sigma: f64, mde: f64, alpha: f64, beta: f64) -> Result<Self> {
        let spec = PowerSpec { sigma, mde, alpha, beta, two_sided: false };
        spec.validate()?;
        Ok(spec)
    }

    pub fn two_sided(mut self, yes: bool) -> Self {
        self.two_sided = yes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidParameter(format!("{what} = {v} out of range")));
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma", self.sigma);
        }
        if !(self.mde > 0.0 && self.mde.is_finite()) {
            return bad("mde", self.mde);
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha", self.alpha);
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad("beta", self.beta);
        }
        Ok(())
    }

    /// z_{1−α} (or z_{1−α/2}) + z_{1−β}.
    pub fn z_sum(&self) -> f64 {
        let a = if self.two_sided { self.alpha / 2.0 } else { self.alpha };
        normal_quantile(1.0 - a) + normal_quantile(1.0 - self.beta)
    }
}

/// Units needed per factor level: ceil(((z_α + z_β) σ / d)²).
pub fn per_level_sample_size(spec: &PowerSpec) -> Result<u64> {
    spec.validate()?;
    let n = (spec.z_sum() * spec.sigma / spec.mde).powi(2);
    // absorb rounding noise so exact squares do not round up
    let n = (n * (1.0 - 1e-12)).ceil().max(1.0);
    Ok(n as u64)
}

/// Total units for the factorial design: the largest per-factor requirement
/// n_f · L_f.
pub fn design_sample_size(space: &FactorSpace, specs: &BTreeMap<String, PowerSpec>) -> Result<u64> {
    let mut best = 0;
    for f in space.factors() {
        let spec = specs
            .get(f.name())
            .ok_or_else(|| Error::InvalidParameter(format!("no power spec for factor `{}`", f.name())))?;
        best = best.max(per_level_sample_size(spec)? * f.level_count() as u64);
    }
    for name in specs.keys() {
        if space.factor_index(name).is_none() {
            return Err(Error::InvalidParameter(format!("power spec for unknown factor `{name}`")));
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VelocityReport {
    pub sum_levels: u64,
    pub product_levels: u64,
    /// Σ/Π: factorial sample size relative to A/B/n for the same MDE.
    pub sample_size_ratio: f64,
    /// sqrt(Σ/Π): factorial MDE relative to A/B/n at the same sample size.
    pub mde_ratio: f64,
    /// Π/Σ: how many times faster the factorial design reaches a decision.
    pub speed_multiplier: f64,
}

pub fn velocity(space: &FactorSpace) -> VelocityReport {
    let sum = space.level_sum() as u64;
    let prod = space.variant_count() as u64;
    let ratio = sum as f64 / prod as f64;
    VelocityReport {
        sum_levels: sum,
        product_levels: prod,
        sample_size_ratio: ratio,
        mde_ratio: ratio.sqrt(),
        speed_multiplier: prod as f64 / sum as f64,
    }
}

impl fmt::Display for VelocityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sum of levels        {}", self.sum_levels)?;
        writeln!(f, "product of levels    {}", self.product_levels)?;
        writeln!(f, "sample size ratio    {:.4}", self.sample_size_ratio)?;
        writeln!(f, "MDE ratio            {:.4}", self.mde_ratio)?;
        writeln!(f, "speed multiplier     {:.4}", self.speed_multiplier)
    }
}
