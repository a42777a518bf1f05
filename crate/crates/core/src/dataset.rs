//! Experimental units, arm-level randomization and the CSV exchange format.
//!
//! CSV layout (header row required, columns in this order when written):
//!
//! ```text
//! unit_id,<covariate>...,<factor name>...,outcome,propensity
//! ```
//!
//! Factor columns hold level names. `outcome` may be empty (not yet
//! observed); `propensity` is optional on input and, when absent, is filled
//! from the design weights. Numbers are written in scientific notation with
//! 17 significant digits (`{:.16e}`), which round-trips every `f64` exactly.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::design::{Design, RunRole};
use crate::error::{Error, Result};
use crate::factor_space::Variant;
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    pub unit_id: String,
    pub covariates: Vec<f64>,
    pub assigned: Variant,
    pub outcome: Option<f64>,
    pub propensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Vec<String>,
    records: Vec<UnitRecord>,
    design: Design,
}

/// A unit awaiting assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub unit_id: String,
    pub covariates: Vec<f64>,
}

impl Dataset {
    pub fn new(schema: Vec<String>, records: Vec<UnitRecord>, design: Design) -> Result<Self> {
        let mut names = HashSet::new();
        for name in &schema {
            if !names.insert(name.as_str()) {
                return Err(Error::InvalidDataset(format!("duplicate covariate `{name}`")));
            }
            if design.space().factor_index(name).is_some() || is_reserved(name) {
                return Err(Error::InvalidDataset(format!(
                    "covariate `{name}` clashes with a factor or reserved column"
                )));
            }
        }
        let mut ids = HashSet::new();
        for (row, r) in records.iter().enumerate() {
            if !ids.insert(r.unit_id.as_str()) {
                return Err(Error::DuplicateUnit {
                    unit_id: r.unit_id.clone(),
                    row: row + 1,
                });
            }
            if r.covariates.len() != schema.len() {
                return Err(Error::InvalidDataset(format!(
                    "unit `{}` has {} covariates, schema has {}",
                    r.unit_id,
                    r.covariates.len(),
                    schema.len()
                )));
            }
            if let Some(bad) = r.covariates.iter().find(|x| !x.is_finite()) {
                return Err(Error::InvalidDataset(format!(
                    "unit `{}` has non-finite covariate {bad}",
                    r.unit_id
                )));
            }
            if design.run_for(&r.assigned).is_none() {
                return Err(Error::InvalidDataset(format!(
                    "unit `{}` is assigned {}, which is not a design run",
                    r.unit_id,
                    design.space().variant_label(&r.assigned)
                )));
            }
            if !(r.propensity > 0.0 && r.propensity <= 1.0) {
                return Err(Error::InvalidPropensity {
                    unit_id: r.unit_id.clone(),
                    value: r.propensity,
                });
            }
            if let Some(y) = r.outcome {
                if !y.is_finite() {
                    return Err(Error::InvalidDataset(format!(
                        "unit `{}` has non-finite outcome",
                        r.unit_id
                    )));
                }
            }
        }
        Ok(Dataset {
            schema,
            records,
            design,
        })
    }

    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    pub fn records(&self) -> &[UnitRecord] {
        &self.records
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn covariate_index(&self, name: &str) -> Result<usize> {
        self.schema
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| Error::MissingCovariate(name.to_string()))
    }

    pub fn covariate_indices<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<usize>> {
        names.iter().map(|n| self.covariate_index(n.as_ref())).collect()
    }

    pub fn role_of(&self, record: &UnitRecord) -> RunRole {
        self.design
            .role_of(&record.assigned)
            .expect("dataset invariant: assigned variant is a design run")
    }

    /// Records assigned to `variant` with an observed outcome.
    pub fn arm<'a>(&'a self, variant: &'a Variant) -> impl Iterator<Item = &'a UnitRecord> + 'a {
        self.records
            .iter()
            .filter(move |r| &r.assigned == variant && r.outcome.is_some())
    }

    /// Replaces outcomes, in record order.
    pub fn with_outcomes(&self, outcomes: Vec<Option<f64>>) -> Result<Dataset> {
        if outcomes.len() != self.records.len() {
            return Err(Error::DimensionMismatch {
                expected: self.records.len(),
                actual: outcomes.len(),
            });
        }
        let records = self
            .records
            .iter()
            .zip(outcomes)
            .map(|(r, y)| UnitRecord {
                outcome: y,
                ..r.clone()
            })
            .collect();
        Dataset::new(self.schema.clone(), records, self.design.clone())
    }

    /// Keeps the records for which `keep` returns true.
    pub fn filter(&self, keep: impl Fn(&UnitRecord) -> bool) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            design: self.design.clone(),
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv_to(file)
    }

    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<()> {
        let space = self.design.space();
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = vec!["unit_id"];
        header.extend(self.schema.iter().map(String::as_str));
        header.extend(space.factors().iter().map(|f| f.name()));
        header.push("outcome");
        header.push("propensity");
        w.write_record(&header)?;
        for r in &self.records {
            let mut row: Vec<String> = Vec::with_capacity(header.len());
            row.push(r.unit_id.clone());
            row.extend(r.covariates.iter().map(|&x| render_number(x)));
            row.extend(space.level_names(&r.assigned).into_iter().map(String::from));
            row.push(r.outcome.map(render_number).unwrap_or_default());
            row.push(render_number(r.propensity));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<Path>, design: &Design) -> Result<Dataset> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file, design)
    }

    /// Columns other than `unit_id`, factor names, `outcome` and `propensity`
    /// are covariates, in header order.
    pub fn read_csv<R: Read>(reader: R, design: &Design) -> Result<Dataset> {
        let space = design.space();
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
        let find = |name: &str| header.iter().position(|h| h == name);
        let id_col = find("unit_id").ok_or_else(|| Error::MissingColumn("unit_id".into()))?;
        let outcome_col = find("outcome").ok_or_else(|| Error::MissingColumn("outcome".into()))?;
        let propensity_col = find("propensity");
        let factor_cols = space
            .factors()
            .iter()
            .map(|f| find(f.name()).ok_or_else(|| Error::MissingColumn(f.name().to_string())))
            .collect::<Result<Vec<_>>>()?;
        let mut seen_cols = HashSet::new();
        for h in &header {
            if !seen_cols.insert(h.as_str()) {
                return Err(Error::Csv {
                    row: 1,
                    column: h.clone(),
                    message: "duplicate column".into(),
                });
            }
        }
        let cov_cols: Vec<usize> = (0..header.len())
            .filter(|c| {
                *c != id_col
                    && *c != outcome_col
                    && Some(*c) != propensity_col
                    && !factor_cols.contains(c)
            })
            .collect();
        let schema: Vec<String> = cov_cols.iter().map(|&c| header[c].clone()).collect();

        let mut ids: HashMap<String, usize> = HashMap::new();
        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let line = i + 2; // header is line 1
            let cell = |c: usize| row.get(c).unwrap_or("");
            let unit_id = cell(id_col).to_string();
            if unit_id.is_empty() {
                return Err(Error::Csv {
                    row: line,
                    column: "unit_id".into(),
                    message: "empty unit_id".into(),
                });
            }
            if ids.insert(unit_id.clone(), line).is_some() {
                return Err(Error::DuplicateUnit { unit_id, row: line });
            }
            let covariates = cov_cols
                .iter()
                .map(|&c| parse_number(cell(c), line, &header[c]))
                .collect::<Result<Vec<_>>>()?;
            let mut levels = Vec::with_capacity(factor_cols.len());
            for (f, &c) in factor_cols.iter().enumerate() {
                let factor = space.factor(f);
                let name = cell(c);
                levels.push(factor.level_index(name).ok_or_else(|| Error::UnknownLevel {
                    factor: factor.name().to_string(),
                    level: name.to_string(),
                    row: line,
                })?);
            }
            let assigned = Variant(levels);
            if design.run_for(&assigned).is_none() {
                return Err(Error::Csv {
                    row: line,
                    column: space.factor(0).name().to_string(),
                    message: format!(
                        "variant {} is not a run of the design",
                        space.variant_label(&assigned)
                    ),
                });
            }
            let outcome = match cell(outcome_col) {
                "" => None,
                s => Some(parse_number(s, line, "outcome")?),
            };
            let propensity = match propensity_col.map(cell) {
                None | Some("") => design.assignment_probability(&assigned),
                Some(s) => parse_number(s, line, "propensity")?,
            };
            records.push(UnitRecord {
                unit_id,
                covariates,
                assigned,
                outcome,
                propensity,
            });
        }
        Dataset::new(schema, records, design.clone())
    }
}

fn is_reserved(name: &str) -> bool {
    matches!(name, "unit_id" | "outcome" | "propensity")
}

fn parse_number(text: &str, row: usize, column: &str) -> Result<f64> {
    if text.is_empty() {
        return Err(Error::Csv {
            row,
            column: column.to_string(),
            message: "missing value".into(),
        });
    }
    let v: f64 = text.parse().map_err(|_| Error::Csv {
        row,
        column: column.to_string(),
        message: format!("`{text}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Csv {
            row,
            column: column.to_string(),
            message: format!("`{text}` is not finite"),
        });
    }
    Ok(v)
}

/// 17 significant digits, scientific notation.
pub fn render_number(x: f64) -> String {
    format!("{x:.16e}")
}

/// Independently assigns each unit to a design run with probability equal to
/// the run's share of total weight; the propensity is that share.
pub fn randomize(
    units: Vec<Unit>,
    schema: Vec<String>,
    design: &Design,
    seed: u64,
) -> Result<Dataset> {
    let runs = design.runs();
    let total = design.total_weight();
    if runs.is_empty() || total <= 0.0 {
        return Err(Error::InvalidDesign("cannot randomize over an empty design".into()));
    }
    let probs: Vec<f64> = runs.iter().map(|r| r.weight / total).collect();
    let mut cumulative = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in &probs {
        acc += p;
        cumulative.push(acc);
    }
    let last_positive = probs.iter().rposition(|&p| p > 0.0).expect("positive total weight");
    let mut rng = stream(seed, Stream::Assignment, 0);
    let records = units
        .into_iter()
        .map(|u| {
            let draw: f64 = rng.random::<f64>() * acc;
            let idx = cumulative
                .iter()
                .position(|&c| draw < c)
                .unwrap_or(last_positive);
            let idx = if probs[idx] > 0.0 { idx } else { last_positive };
            UnitRecord {
                unit_id: u.unit_id,
                covariates: u.covariates,
                assigned: runs[idx].variant.clone(),
                outcome: None,
                propensity: probs[idx],
            }
        })
        .collect();
    Dataset::new(schema, records, design.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_study;
    use crate::design::{select_holdout, Run};
    use crate::factor_space::FactorSpace;
    use crate::special::chi2_upper_p;

    fn units(n: usize) -> Vec<Unit> {
        (0..n)
            .map(|i| Unit {
                unit_id: format!("u{i:06}"),
                covariates: vec![i as f64 * 0.5],
            })
            .collect()
    }

    fn nine_arm_design() -> Design {
        select_holdout(&case_study::in_sample_design(), 5).unwrap().0
    }

    #[test]
    fn equal_arms_pass_goodness_of_fit() {
        let d = nine_arm_design();
        let n = 45_000;
        let data = randomize(units(n), vec!["x".into()], &d, 17).unwrap();
        let mut counts = vec![0usize; d.runs().len()];
        for r in data.records() {
            let idx = d.runs().iter().position(|run| run.variant == r.assigned).unwrap();
            counts[idx] += 1;
            assert!((r.propensity - 1.0 / 9.0).abs() < 1e-12);
        }
        let expected = n as f64 / 9.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2_upper_p(chi2, 8.0) > 0.001, "chi2={chi2}");
    }

    #[test]
    fn single_run_design_gets_everyone() {
        let s = FactorSpace::from_level_counts(&[2]).unwrap();
        let d = Design::new(
            s,
            vec![Run {
                variant: Variant(vec![1]),
                weight: 1.0,
                role: RunRole::InSample,
            }],
            None,
        )
        .unwrap();
        let data = randomize(units(50), vec!["x".into()], &d, 1).unwrap();
        assert!(data.records().iter().all(|r| r.assigned == Variant(vec![1]) && r.propensity == 1.0));
    }

    #[test]
    fn same_seed_same_assignment() {
        let d = nine_arm_design();
        let a = randomize(units(500), vec!["x".into()], &d, 3).unwrap();
        let b = randomize(units(500), vec!["x".into()], &d, 3).unwrap();
        let c = randomize(units(500), vec!["x".into()], &d, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn propensities_sum_to_one_across_runs() {
        let d = nine_arm_design();
        let total: f64 = d.runs().iter().map(|r| d.assignment_probability(&r.variant)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn assignment_is_independent_of_covariates() {
        let d = nine_arm_design();
        let n = 50_000;
        let us: Vec<Unit> = (0..n)
            .map(|i| Unit {
                unit_id: format!("u{i}"),
                covariates: vec![((i * 7919) % 1000) as f64],
            })
            .collect();
        let data = randomize(us, vec!["x".into()], &d, 99).unwrap();
        let space = d.space();
        let xs: Vec<f64> = data.records().iter().map(|r| r.covariates[0]).collect();
        for col in 0..space.encoded_width(false) {
            let w: Vec<f64> = data
                .records()
                .iter()
                .map(|r| space.encode_one_hot(&r.assigned, false).unwrap()[col])
                .collect();
            let corr = correlation(&xs, &w);
            assert!(corr.abs() < 0.02, "column {col}: corr {corr}");
        }
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn minimal_csv_loads() {
        let d = case_study::in_sample_design();
        let text = "unit_id,aos,Promo Spread,Discount,Trigger Timing,Messaging,outcome\n\
                    a,12.5,Upfront,Level2,Ongoing,Generic,3.5\n\
                    b,40,Spread,Level1,Ongoing,Generic,\n";
        let data = Dataset::read_csv(text.as_bytes(), &d).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.schema(), &["aos".to_string()]);
        assert_eq!(data.records()[0].outcome, Some(3.5));
        assert_eq!(data.records()[1].outcome, None);
        assert!((data.records()[0].propensity - 0.125).abs() < 1e-15);
    }

    #[test]
    fn csv_errors_are_distinct() {
        let d = case_study::in_sample_design();
        let head = "unit_id,aos,Promo Spread,Discount,Trigger Timing,Messaging,outcome\n";
        let bad_level = format!("{head}a,1,Upfront,Level9,Ongoing,Generic,1\n");
        match Dataset::read_csv(bad_level.as_bytes(), &d) {
            Err(Error::UnknownLevel { factor, level, row }) => {
                assert_eq!((factor.as_str(), level.as_str(), row), ("Discount", "Level9", 2));
            }
            other => panic!("unexpected {other:?}"),
        }
        let dup = format!("{head}a,1,Upfront,Level2,Ongoing,Generic,1\na,2,Upfront,Level2,Ongoing,Generic,1\n");
        assert!(matches!(Dataset::read_csv(dup.as_bytes(), &d), Err(Error::DuplicateUnit { row: 3, .. })));
        let missing = "unit_id,aos,Promo Spread,Discount,Trigger Timing,outcome\n";
        assert!(matches!(Dataset::read_csv(missing.as_bytes(), &d), Err(Error::MissingColumn(c)) if c == "Messaging"));
        let empty_cov = format!("{head}a,,Upfront,Level2,Ongoing,Generic,1\n");
        assert!(matches!(Dataset::read_csv(empty_cov.as_bytes(), &d), Err(Error::Csv { row: 2, .. })));
    }

    #[test]
    fn csv_round_trip_is_byte_identical() {
        let d = nine_arm_design();
        let us: Vec<Unit> = (0..1000)
            .map(|i| Unit {
                unit_id: format!("u{i:04}"),
                covariates: vec![(i as f64).sqrt() * std::f64::consts::PI, 1.0 / (i as f64 + 3.0)],
            })
            .collect();
        let data = randomize(us, vec!["x1".into(), "x2".into()], &d, 8).unwrap();
        let outcomes = (0..1000).map(|i| if i % 97 == 0 { None } else { Some((i as f64).ln_1p() / 7.0) }).collect();
        let data = data.with_outcomes(outcomes).unwrap();
        let mut first = Vec::new();
        data.write_csv_to(&mut first).unwrap();
        let loaded = Dataset::read_csv(first.as_slice(), &d).unwrap();
        assert_eq!(loaded, data);
        let mut second = Vec::new();
        loaded.write_csv_to(&mut second).unwrap();
        assert_eq!(first, second);
    }
}
