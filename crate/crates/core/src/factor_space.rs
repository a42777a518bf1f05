//! Policy space modelled as ordered factors with named levels.
//!
//! A [`Variant`] picks one level per factor. Ordering of factors and levels is
//! always declaration order; enumeration is lexicographic in level indices.
//!
//! The on-disk form is a TOML document:
//!
//! ```toml
//! [[factors]]
//! name = "Promo Spread"
//! levels = ["Spread", "Upfront"]
//! baseline = "Spread"        # optional, defaults to the first level
//! ```

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Factor {
    name: String,
    levels: Vec<String>,
    baseline_index: usize,
}

impl Factor {
    pub fn new<S: Into<String>>(name: S, levels: Vec<String>) -> Result<Self> {
        Self::with_baseline(name, levels, 0)
    }

    pub fn with_baseline<S: Into<String>>(
        name: S,
        levels: Vec<String>,
        baseline_index: usize,
    ) -> Result<Self> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(Error::InvalidSpace("factor name must be non-empty".into()));
        }
        if levels.len() < 2 {
            return Err(Error::InvalidSpace(format!(
                "factor `{name}` needs at least 2 levels, got {}",
                levels.len()
            )));
        }
        let mut seen = HashSet::new();
        for level in &levels {
            if level.trim().is_empty() {
                return Err(Error::InvalidSpace(format!(
                    "factor `{name}` has an empty level name"
                )));
            }
            if !seen.insert(level.as_str()) {
                return Err(Error::InvalidSpace(format!(
                    "factor `{name}` repeats level `{level}`"
                )));
            }
        }
        if baseline_index >= levels.len() {
            return Err(Error::InvalidSpace(format!(
                "factor `{name}`: baseline index {baseline_index} out of range for {} levels",
                levels.len()
            )));
        }
        Ok(Factor {
            name,
            levels,
            baseline_index,
        })
    }

    /// Convenience constructor from string slices.
    pub fn from_strs(name: &str, levels: &[&str], baseline: Option<&str>) -> Result<Self> {
        let levels: Vec<String> = levels.iter().map(|s| s.to_string()).collect();
        let baseline_index = match baseline {
            None => 0,
            Some(b) => levels.iter().position(|l| l == b).ok_or_else(|| {
                Error::InvalidSpace(format!("factor `{name}`: baseline `{b}` is not a level"))
            })?,
        };
        Self::with_baseline(name, levels, baseline_index)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn baseline_index(&self) -> usize {
        self.baseline_index
    }

    pub fn level_index(&self, level: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == level)
    }

    /// Non-baseline level indices in declaration order.
    pub fn non_baseline_levels(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.levels.len()).filter(move |&l| l != self.baseline_index)
    }
}

/// Ordered collection of factors. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "FactorSpaceDoc", into = "FactorSpaceDoc")]
pub struct FactorSpace {
    factors: Vec<Factor>,
}

impl FactorSpace {
    pub fn new(factors: Vec<Factor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidSpace("at least one factor is required".into()));
        }
        let mut seen = HashSet::new();
        for f in &factors {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::InvalidSpace(format!(
                    "duplicate factor name `{}`",
                    f.name
                )));
            }
        }
        Ok(FactorSpace { factors })
    }

    /// Space of anonymous factors `A`, `B`, ... with levels `0..L`.
    pub fn from_level_counts(counts: &[usize]) -> Result<Self> {
        let factors = counts
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                Factor::new(
                    factor_letter(i),
                    (0..n).map(|l| l.to_string()).collect(),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(factors)
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn factor(&self, index: usize) -> &Factor {
        &self.factors[index]
    }

    pub fn factor_count(&self) -> usize {
        self.factors.len()
    }

    pub fn factor_index(&self, name: &str) -> Option<usize> {
        self.factors.iter().position(|f| f.name == name)
    }

    pub fn level_counts(&self) -> Vec<usize> {
        self.factors.iter().map(Factor::level_count).collect()
    }

    /// Number of distinct variants: the product of the level counts.
    pub fn variant_count(&self) -> usize {
        self.factors.iter().map(Factor::level_count).product()
    }

    pub fn level_sum(&self) -> usize {
        self.factors.iter().map(Factor::level_count).sum()
    }

    /// All variants, lexicographic in level indices (last factor varies fastest).
    pub fn enumerate_variants(&self) -> Vec<Variant> {
        let counts = self.level_counts();
        let total = self.variant_count();
        let mut out = Vec::with_capacity(total);
        let mut current = vec![0usize; counts.len()];
        for _ in 0..total {
            out.push(Variant(current.clone()));
            for pos in (0..counts.len()).rev() {
                current[pos] += 1;
                if current[pos] < counts[pos] {
                    break;
                }
                current[pos] = 0;
            }
        }
        out
    }

    /// The variant with every factor at its baseline level.
    pub fn baseline_variant(&self) -> Variant {
        Variant(self.factors.iter().map(|f| f.baseline_index).collect())
    }

    pub fn validate_variant(&self, variant: &Variant) -> Result<()> {
        if variant.0.len() != self.factors.len() {
            return Err(Error::DimensionMismatch {
                expected: self.factors.len(),
                actual: variant.0.len(),
            });
        }
        for (f, (&idx, factor)) in variant.0.iter().zip(&self.factors).enumerate() {
            if idx >= factor.level_count() {
                return Err(Error::InvalidVariant(format!(
                    "level index {idx} out of range for factor {f} (`{}`)",
                    factor.name
                )));
            }
        }
        Ok(())
    }

    /// Parses a variant from one level name per factor.
    pub fn variant_from_names<S: AsRef<str>>(&self, names: &[S]) -> Result<Variant> {
        if names.len() != self.factors.len() {
            return Err(Error::DimensionMismatch {
                expected: self.factors.len(),
                actual: names.len(),
            });
        }
        names
            .iter()
            .zip(&self.factors)
            .map(|(n, f)| {
                let n = n.as_ref().trim();
                f.level_index(n).ok_or_else(|| {
                    Error::InvalidVariant(format!("`{n}` is not a level of factor `{}`", f.name))
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Variant)
    }

    /// Parses `"Upfront,Level3,Ongoing,Generic"`.
    pub fn parse_variant(&self, text: &str) -> Result<Variant> {
        let parts: Vec<&str> = text.split(',').collect();
        self.variant_from_names(&parts)
    }

    pub fn level_names<'a>(&'a self, variant: &Variant) -> Vec<&'a str> {
        variant
            .0
            .iter()
            .zip(&self.factors)
            .map(|(&l, f)| f.levels[l].as_str())
            .collect()
    }

    pub fn variant_label(&self, variant: &Variant) -> String {
        self.level_names(variant).join(",")
    }

    /// Length of the one-hot row.
    pub fn encoded_width(&self, drop_baseline: bool) -> usize {
        if drop_baseline {
            self.level_sum() - self.factors.len()
        } else {
            self.level_sum()
        }
    }

    /// One-hot encoding of a variant; with `drop_baseline` each factor
    /// contributes one column per non-baseline level.
    pub fn encode_one_hot(&self, variant: &Variant, drop_baseline: bool) -> Result<Vec<f64>> {
        self.validate_variant(variant)?;
        let mut row = Vec::with_capacity(self.encoded_width(drop_baseline));
        for (&active, factor) in variant.0.iter().zip(&self.factors) {
            for level in 0..factor.level_count() {
                if drop_baseline && level == factor.baseline_index {
                    continue;
                }
                row.push(if level == active { 1.0 } else { 0.0 });
            }
        }
        Ok(row)
    }

    /// Inverse of [`encode_one_hot`](Self::encode_one_hot).
    pub fn decode_one_hot(&self, row: &[f64], drop_baseline: bool) -> Result<Variant> {
        let width = self.encoded_width(drop_baseline);
        if row.len() != width {
            return Err(Error::DimensionMismatch {
                expected: width,
                actual: row.len(),
            });
        }
        let mut pos = 0;
        let mut out = Vec::with_capacity(self.factors.len());
        for factor in &self.factors {
            let mut active = None;
            for level in 0..factor.level_count() {
                if drop_baseline && level == factor.baseline_index {
                    continue;
                }
                let v = row[pos];
                pos += 1;
                if v == 1.0 {
                    if active.is_some() {
                        return Err(Error::InvalidVariant(format!(
                            "factor `{}` has more than one active level",
                            factor.name
                        )));
                    }
                    active = Some(level);
                } else if v != 0.0 {
                    return Err(Error::InvalidVariant(format!(
                        "one-hot entry {v} is not 0 or 1"
                    )));
                }
            }
            match active {
                Some(l) => out.push(l),
                None if drop_baseline => out.push(factor.baseline_index),
                None => {
                    return Err(Error::InvalidVariant(format!(
                        "factor `{}` has no active level",
                        factor.name
                    )))
                }
            }
        }
        Ok(Variant(out))
    }

    /// Labels of the dropped-baseline one-hot columns, `Factor[Level]`.
    pub fn dummy_labels(&self) -> Vec<String> {
        let mut out = Vec::new();
        for f in &self.factors {
            for l in f.non_baseline_levels() {
                out.push(format!("{}[{}]", f.name, f.levels[l]));
            }
        }
        out
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: FactorSpaceDoc = toml::from_str(text)?;
        FactorSpace::try_from(doc)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&FactorSpaceDoc::from(self.clone()))
            .expect("factor space serializes to TOML")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// `A`, `B`, ..., `Z`, `A1`, `B1`, ...
pub fn factor_letter(index: usize) -> String {
    let letter = (b'A' + (index % 26) as u8) as char;
    if index < 26 {
        letter.to_string()
    } else {
        format!("{letter}{}", index / 26)
    }
}

/// One level index per factor, in factor order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Variant(pub Vec<usize>);

impl Variant {
    pub fn new(levels: Vec<usize>) -> Self {
        Variant(levels)
    }

    pub fn levels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn level(&self, factor: usize) -> usize {
        self.0[factor]
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{l}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FactorDoc {
    name: String,
    levels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    baseline: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FactorSpaceDoc {
    factors: Vec<FactorDoc>,
}

impl TryFrom<FactorSpaceDoc> for FactorSpace {
    type Error = Error;

    fn try_from(doc: FactorSpaceDoc) -> Result<Self> {
        let factors = doc
            .factors
            .into_iter()
            .map(|f| {
                let baseline_index = match &f.baseline {
                    None => 0,
                    Some(b) => f.levels.iter().position(|l| l == b).ok_or_else(|| {
                        Error::InvalidSpace(format!(
                            "factor `{}`: baseline `{b}` is not one of its levels",
                            f.name
                        ))
                    })?,
                };
                Factor::with_baseline(f.name, f.levels, baseline_index)
            })
            .collect::<Result<Vec<_>>>()?;
        FactorSpace::new(factors)
    }
}

impl From<FactorSpace> for FactorSpaceDoc {
    fn from(space: FactorSpace) -> Self {
        FactorSpaceDoc {
            factors: space
                .factors
                .into_iter()
                .map(|f| FactorDoc {
                    baseline: Some(f.levels[f.baseline_index].clone()),
                    name: f.name,
                    levels: f.levels,
                })
                .collect(),
        }
    }
}
