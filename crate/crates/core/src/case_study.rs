//! Published figures from the promotion-retention case study: the 2×3×2×2
//! policy space, its eight-arm in-sample design, the main-effects and
//! spend-interaction coefficient tables, the spend-segmented policy table and
//! the predicted profit of all 24 policies.
//!
//! Metric values were multiplied by an undisclosed constant before
//! publication, so only relative structure is meaningful.

use crate::design::Design;
use crate::estimate::{CoefKey, EffectsFit};
use crate::factor_space::{Factor, FactorSpace, Variant};

pub const SPEND: &str = "avg_order_spend";

pub const SPACE_TOML: &str = r#"# Promotion policy space: 2 x 3 x 2 x 2 = 24 variants.
[[factors]]
name = "Promo Spread"
levels = ["Spread", "Upfront"]
baseline = "Spread"

[[factors]]
name = "Discount"
levels = ["Level1", "Level2", "Level3"]
baseline = "Level1"

[[factors]]
name = "Trigger Timing"
levels = ["Ongoing", "Weekday"]
baseline = "Ongoing"

[[factors]]
name = "Messaging"
levels = ["Generic", "Mxrec"]
baseline = "Generic"
"#;

pub fn space() -> FactorSpace {
    let f = |name: &str, levels: &[&str]| Factor::from_strs(name, levels, None).expect("static factor");
    FactorSpace::new(vec![
        f("Promo Spread", &["Spread", "Upfront"]),
        f("Discount", &["Level1", "Level2", "Level3"]),
        f("Trigger Timing", &["Ongoing", "Weekday"]),
        f("Messaging", &["Generic", "Mxrec"]),
    ])
    .expect("static space")
}

/// Intercept and the five non-baseline main effects, in column order
/// Upfront, Level2, Level3, Weekday, Mxrec.
pub const MAIN_EFFECTS: [f64; 6] = [7.35231, 0.12905, 0.40757, 0.41950, -0.01350, -0.02732];

/// Spend-interaction model: intercept, then main effects (Upfront, Level2,
/// Level3, Weekday, Mxrec), spend slope, then spend interactions in the same
/// level order.
pub const SPEND_MODEL: [f64; 12] = [
    1.25977, 0.26784, 0.63302, 0.93321, 0.36361, 0.01256, 0.23864, -0.00534, -0.00848,
    -0.01947, -0.01476, -0.00126,
];

pub fn main_effects_fit() -> EffectsFit {
    let s = space();
    let mut coef = vec![(CoefKey::Intercept, MAIN_EFFECTS[0])];
    let levels = non_baseline_keys(&s);
    for (key, value) in levels.into_iter().zip(&MAIN_EFFECTS[1..]) {
        coef.push((key, *value));
    }
    EffectsFit::from_coefficients(s, Vec::new(), coef).expect("static fit")
}

pub fn spend_model_fit() -> EffectsFit {
    let s = space();
    let mut coef = vec![(CoefKey::Intercept, SPEND_MODEL[0])];
    let levels = non_baseline_keys(&s);
    for (key, value) in levels.iter().cloned().zip(&SPEND_MODEL[1..6]) {
        coef.push((key, *value));
    }
    coef.push((CoefKey::Covariate(0), SPEND_MODEL[6]));
    for (key, value) in levels.iter().zip(&SPEND_MODEL[7..]) {
        if let CoefKey::Level { factor, level } = *key {
            coef.push((CoefKey::Interaction { factor, level, covariate: 0 }, *value));
        }
    }
    EffectsFit::from_coefficients(s, vec![SPEND.to_string()], coef).expect("static fit")
}

fn non_baseline_keys(space: &FactorSpace) -> Vec<CoefKey> {
    let mut out = Vec::new();
    for (factor, f) in space.factors().iter().enumerate() {
        for level in f.non_baseline_levels() {
            out.push(CoefKey::Level { factor, level });
        }
    }
    out
}

/// (Promo Spread, Discount, Trigger Timing, Messaging, predicted profit, in sample),
/// in published (descending) order.
pub const ALL_POLICY_PREDICTIONS: [(&str, &str, &str, &str, f64, bool); 24] = [
    ("Upfront", "Level3", "Ongoing", "Generic", 7.90091, false),
    ("Upfront", "Level2", "Ongoing", "Generic", 7.88897, true),
    ("Upfront", "Level3", "Weekday", "Generic", 7.88752, false),
    ("Upfront", "Level2", "Weekday", "Generic", 7.87558, true),
    ("Upfront", "Level3", "Ongoing", "Mxrec", 7.87374, true),
    ("Upfront", "Level2", "Ongoing", "Mxrec", 7.86181, false),
    ("Upfront", "Level3", "Weekday", "Mxrec", 7.86036, false),
    ("Upfront", "Level2", "Weekday", "Mxrec", 7.84842, false),
    ("Spread", "Level3", "Ongoing", "Generic", 7.77188, false),
    ("Spread", "Level2", "Ongoing", "Generic", 7.75994, false),
    ("Spread", "Level3", "Weekday", "Generic", 7.75849, true),
    ("Spread", "Level2", "Weekday", "Generic", 7.74656, false),
    ("Spread", "Level3", "Ongoing", "Mxrec", 7.74472, false),
    ("Spread", "Level2", "Ongoing", "Mxrec", 7.73278, true),
    ("Spread", "Level3", "Weekday", "Mxrec", 7.73133, false),
    ("Spread", "Level2", "Weekday", "Mxrec", 7.71939, true),
    ("Upfront", "Level1", "Ongoing", "Generic", 7.48146, false),
    ("Upfront", "Level1", "Weekday", "Generic", 7.46807, false),
    ("Upfront", "Level1", "Ongoing", "Mxrec", 7.45429, false),
    ("Upfront", "Level1", "Weekday", "Mxrec", 7.44091, true),
    ("Spread", "Level1", "Ongoing", "Generic", 7.35242, true),
    ("Spread", "Level1", "Weekday", "Generic", 7.33904, false),
    ("Spread", "Level1", "Ongoing", "Mxrec", 7.32526, false),
    ("Spread", "Level1", "Weekday", "Mxrec", 7.31188, false),
];

pub fn prediction_variant(row: &(&str, &str, &str, &str, f64, bool)) -> Variant {
    space()
        .variant_from_names(&[row.0, row.1, row.2, row.3])
        .expect("static variant")
}

/// The eight in-sample arms, equal weights.
pub fn in_sample_design() -> Design {
    let variants = ALL_POLICY_PREDICTIONS
        .iter()
        .filter(|r| r.5)
        .map(prediction_variant)
        .collect();
    Design::equal_weight(space(), variants).expect("static design")
}

/// One row of the spend-segmented optimal policy table.
#[derive(Debug, Clone, Copy)]
pub struct SpendSegmentRow {
    pub lo: i64,
    /// `None` stands for an open upper end.
    pub hi: Option<i64>,
    pub levels: [&'static str; 4],
    pub constant: f64,
    pub slope: f64,
}

pub const SPEND_POLICY_TABLE: [SpendSegmentRow; 6] = [
    SpendSegmentRow { lo: 0, hi: Some(10), levels: ["Upfront", "Level3", "Weekday", "Mxrec"], constant: 2.837, slope: 0.1975 },
    SpendSegmentRow { lo: 11, hi: Some(24), levels: ["Upfront", "Level3", "Weekday", "Generic"], constant: 2.824, slope: 0.1986 },
    SpendSegmentRow { lo: 25, hi: Some(26), levels: ["Upfront", "Level3", "Ongoing", "Generic"], constant: 2.461, slope: 0.2134 },
    SpendSegmentRow { lo: 27, hi: Some(48), levels: ["Upfront", "Level2", "Ongoing", "Generic"], constant: 2.160, slope: 0.2247 },
    SpendSegmentRow { lo: 49, hi: Some(75), levels: ["Spread", "Level2", "Ongoing", "Generic"], constant: 1.893, slope: 0.2301 },
    SpendSegmentRow { lo: 76, hi: None, levels: ["Spread", "Level1", "Ongoing", "Generic"], constant: 1.260, slope: 0.2385 },
];
