//! Optimal policy selection from a fitted additive model.
//!
//! Without cross-factor interactions the predicted outcome is a sum of
//! per-factor terms, so the best variant is found factor by factor.

use std::fmt;

use serde::Serialize;

use crate::design::{Design, RunRole};
use crate::error::{Error, Result};
use crate::estimate::EffectsFit;
use crate::factor_space::{FactorSpace, Variant};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyPrediction {
    pub variant: Variant,
    pub predicted_outcome: f64,
    pub in_sample: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentPolicyRow {
    pub lo: i64,
    pub hi: i64,
    pub optimal_variant: Variant,
    /// Predicted outcome at covariate value 0.
    pub constant: f64,
    /// Change in predicted outcome per unit of the covariate.
    pub slope: f64,
}

fn argmax_levels(fit: &EffectsFit, x: Option<&[f64]>) -> Variant {
    let space = fit.space();
    let levels = (0..space.factor_count())
        .map(|f| {
            let mut best = (0, f64::NEG_INFINITY);
            for l in 0..space.factor(f).level_count() {
                let s = fit.level_score(f, l, x);
                if s > best.1 {
                    best = (l, s);
                }
            }
            best.0
        })
        .collect();
    Variant::new(levels)
}

/// Per-factor level with the largest main effect (baseline scores 0).
/// Ties resolve to the lower level index.
pub fn optimal_global(fit: &EffectsFit) -> Variant {
    argmax_levels(fit, None)
}

/// Per-factor argmax of β_fl + λ_fl'x.
pub fn optimal_personalized(fit: &EffectsFit, x: &[f64]) -> Result<Variant> {
    if x.len() != fit.covariates().len() {
        if x.len() < fit.covariates().len() {
            return Err(Error::MissingCovariate(fit.covariates()[x.len()..].join(", ")));
        }
        return Err(Error::DimensionMismatch {
            expected: fit.covariates().len(),
            actual: x.len(),
        });
    }
    Ok(argmax_levels(fit, Some(x)))
}

/// Predictions for every variant in the space, best first. `x` is required
/// when the fit has covariate terms.
pub fn predict_all(fit: &EffectsFit, design: Option<&Design>, x: Option<&[f64]>) -> Result<Vec<PolicyPrediction>> {
    if let Some(d) = design {
        if d.space() != fit.space() {
            return Err(Error::InvalidDesign("design and fit use different factor spaces".into()));
        }
    }
    let mut out = fit
        .space()
        .enumerate_variants()
        .into_iter()
        .map(|v| {
            let predicted_outcome = fit.predict_outcome(&v, x)?;
            let in_sample = design.is_some_and(|d| d.role_of(&v) == Some(RunRole::InSample));
            Ok(PolicyPrediction { variant: v, predicted_outcome, in_sample })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| b.predicted_outcome.total_cmp(&a.predicted_outcome));
    Ok(out)
}

/// Optimal variant along an integer grid of one covariate, merged into
/// intervals. Other covariates sit at `reference` (zeros by default).
pub fn segment_policy_table(
    fit: &EffectsFit,
    covariate: &str,
    grid: &[i64],
    reference: Option<&[f64]>,
) -> Result<Vec<SegmentPolicyRow>> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty grid".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("grid must be strictly increasing".into()));
    }
    let c = fit
        .covariates()
        .iter()
        .position(|n| n == covariate)
        .ok_or_else(|| Error::MissingCovariate(covariate.to_string()))?;
    let mut base = match reference {
        Some(r) if r.len() == fit.covariates().len() => r.to_vec(),
        Some(r) => {
            return Err(Error::DimensionMismatch {
                expected: fit.covariates().len(),
                actual: r.len(),
            })
        }
        None => vec![0.0; fit.covariates().len()],
    };
    let mut rows: Vec<SegmentPolicyRow> = Vec::new();
    for &g in grid {
        base[c] = g as f64;
        let v = argmax_levels(fit, Some(&base));
        match rows.last_mut() {
            Some(last) if last.optimal_variant == v => last.hi = g,
            _ => {
                let mut at0 = base.clone();
                at0[c] = 0.0;
                let constant = fit.predict_outcome(&v, Some(&at0))?;
                let slope = fit.gamma(c)
                    + (0..fit.space().factor_count())
                        .map(|f| fit.lambda(f, v.level(f), c))
                        .sum::<f64>();
                rows.push(SegmentPolicyRow { lo: g, hi: g, optimal_variant: v, constant, slope });
            }
        }
    }
    Ok(rows)
}

/// Text rendering helpers.
pub struct PredictionTable<'a>(pub &'a FactorSpace, pub &'a [PolicyPrediction]);

impl fmt::Display for PredictionTable<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let space = self.0;
        let widths: Vec<usize> = space
            .factors()
            .iter()
            .map(|fac| fac.levels().iter().map(String::len).chain([fac.name().len()]).max().unwrap_or(0))
            .collect();
        for (fac, w) in space.factors().iter().zip(&widths) {
            write!(f, "{:<w$}  ", fac.name())?;
        }
        writeln!(f, "{:>10}  in sample", "predicted")?;
        for p in self.1 {
            for (name, w) in space.level_names(&p.variant).iter().zip(&widths) {
                write!(f, "{name:<w$}  ")?;
            }
            writeln!(f, "{:>10.5}  {}", p.predicted_outcome, if p.in_sample { "yes" } else { "no" })?;
        }
        Ok(())
    }
}

pub struct SegmentTable<'a>(pub &'a FactorSpace, pub &'a [SegmentPolicyRow]);

impl fmt::Display for SegmentTable<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:<44} {:>9} {:>9}", "interval", "optimal variant", "constant", "slope")?;
        for r in self.1 {
            writeln!(
                f,
                "{:<12} {:<44} {:>9.5} {:>9.5}",
                format!("[{}, {}]", r.lo, r.hi),
                self.0.variant_label(&r.optimal_variant),
                r.constant,
                r.slope
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_study;
    use crate::estimate::CoefKey;

    #[test]
    fn global_optimum_of_main_effects_fixture() {
        let fit = case_study::main_effects_fit();
        let best = optimal_global(&fit);
        assert_eq!(best, case_study::space().parse_variant("Upfront,Level3,Ongoing,Generic").unwrap());
    }

    #[test]
    fn negative_effects_pick_baselines_and_ties_pick_lower_index() {
        let s = case_study::space();
        let neg = EffectsFit::from_coefficients(
            s.clone(),
            vec![],
            vec![(CoefKey::Level { factor: 1, level: 1 }, -1.0), (CoefKey::Level { factor: 0, level: 1 }, -0.5)],
        )
        .unwrap();
        assert_eq!(optimal_global(&neg), s.baseline_variant());
        let tie = EffectsFit::from_coefficients(
            s.clone(),
            vec![],
            vec![(CoefKey::Level { factor: 1, level: 1 }, 0.3), (CoefKey::Level { factor: 1, level: 2 }, 0.3)],
        )
        .unwrap();
        assert_eq!(optimal_global(&tie).level(1), 1);
    }

    #[test]
    fn personalized_examples() {
        let fit = case_study::spend_model_fit();
        let s = case_study::space();
        assert_eq!(optimal_personalized(&fit, &[80.0]).unwrap(), s.parse_variant("Spread,Level1,Ongoing,Generic").unwrap());
        assert_eq!(optimal_personalized(&fit, &[20.0]).unwrap(), s.parse_variant("Upfront,Level3,Weekday,Generic").unwrap());
        let beta_only = argmax_levels(&fit, None);
        assert_eq!(optimal_personalized(&fit, &[0.0]).unwrap(), beta_only);
        assert!(matches!(optimal_personalized(&fit, &[]), Err(Error::MissingCovariate(_))));
    }

    #[test]
    fn predict_all_flags_and_orders() {
        let fit = case_study::main_effects_fit();
        let design = case_study::in_sample_design();
        let rows = predict_all(&fit, Some(&design), None).unwrap();
        assert_eq!(rows.len(), 24);
        assert_eq!(rows.iter().filter(|r| r.in_sample).count(), 8);
        assert!(!rows[0].in_sample);
        assert!(rows.windows(2).all(|w| w[0].predicted_outcome >= w[1].predicted_outcome));
        let zero = EffectsFit::from_coefficients(case_study::space(), vec![], vec![(CoefKey::Intercept, 2.5)]).unwrap();
        assert!(predict_all(&zero, None, None).unwrap().iter().all(|r| r.predicted_outcome == 2.5));
    }

    #[test]
    fn segment_table_without_interactions_is_one_row() {
        let s = case_study::space();
        let fit = EffectsFit::from_coefficients(
            s,
            vec!["x".into()],
            vec![(CoefKey::Level { factor: 0, level: 1 }, 0.2), (CoefKey::Covariate(0), 0.5)],
        )
        .unwrap();
        let grid: Vec<i64> = (0..=100).collect();
        let rows = segment_policy_table(&fit, "x", &grid, None).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].lo, rows[0].hi), (0, 100));
        assert_eq!(rows[0].slope, 0.5);
        assert!(segment_policy_table(&fit, "x", &[], None).is_err());
        assert!(segment_policy_table(&fit, "y", &grid, None).is_err());
    }

    #[test]
    fn segment_breaks_follow_linear_crossings() {
        // independent oracle: the optimal level of each factor flips where
        // its score line crosses the competitor's
        let fit = case_study::spend_model_fit();
        let grid: Vec<i64> = (0..=100).collect();
        let rows = segment_policy_table(&fit, case_study::SPEND, &grid, None).unwrap();
        let crossings = [
            0.01256 / 0.00126,                         // Mxrec vs Generic
            0.36361 / 0.01476,                         // Weekday vs Ongoing
            (0.93321 - 0.63302) / (0.01947 - 0.00848), // Level3 vs Level2
            0.26784 / 0.00534,                         // Upfront vs Spread
            0.63302 / 0.00848,                         // Level2 vs Level1
        ];
        let starts: Vec<i64> = rows.iter().skip(1).map(|r| r.lo).collect();
        let expected: Vec<i64> = crossings.iter().map(|c: &f64| c.ceil() as i64).collect();
        assert_eq!(starts, expected);
        assert_eq!(starts, vec![10, 25, 28, 51, 75]);
        for w in rows.windows(2) {
            assert_eq!(w[0].hi + 1, w[1].lo);
        }
        for r in &rows {
            for g in [r.lo, r.hi] {
                assert_eq!(optimal_personalized(&fit, &[g as f64]).unwrap(), r.optimal_variant);
            }
        }
    }
}
