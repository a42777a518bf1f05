//! Readers for the CLI's input files. Every reader records the file digest
//! in the run context and reports failures against the file name.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use factorlab::estimate::{model_keys, EffectsFit};
use factorlab::sim::SimConfig;
use factorlab::{Dataset, Design, FactorSpace, Unit, Variant};
use serde::Deserialize;

use crate::error::{CliError, InFile};
use crate::output::RunContext;

pub fn space(ctx: &mut RunContext, path: &Path) -> Result<FactorSpace, CliError> {
    let text = ctx.read(path)?;
    FactorSpace::from_toml_str(&text).in_file(path)
}

pub fn design(ctx: &mut RunContext, path: &Path) -> Result<Design, CliError> {
    let text = ctx.read(path)?;
    Design::from_toml_str(&text).in_file(path)
}

pub fn dataset(ctx: &mut RunContext, path: &Path, design: &Design) -> Result<Dataset, CliError> {
    let text = ctx.read(path)?;
    Dataset::read_csv(text.as_bytes(), design).in_file(path)
}

pub fn sim_config(ctx: &mut RunContext, path: &Path) -> Result<SimConfig, CliError> {
    let text = ctx.read(path)?;
    SimConfig::from_toml_str(&text).in_file(path)
}

/// Units file: `unit_id` then numeric covariate columns.
pub fn units(ctx: &mut RunContext, path: &Path) -> Result<(Vec<String>, Vec<Unit>), CliError> {
    let text = ctx.read(path)?;
    let bad = |row: usize, column: &str, message: String| {
        CliError::input(path, format!("row {row}, column `{column}`: {message}"))
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::input(path, e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    if header.first().map(String::as_str) != Some("unit_id") {
        return Err(bad(1, header.first().map_or("", String::as_str), "first column must be `unit_id`".into()));
    }
    let schema = header[1..].to_vec();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| CliError::input(path, format!("row {line}: {e}")))?;
        let id = row.get(0).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(bad(line, "unit_id", "empty unit_id".into()));
        }
        if !seen.insert(id.clone()) {
            return Err(bad(line, "unit_id", format!("duplicate unit_id `{id}`")));
        }
        let mut covariates = Vec::with_capacity(schema.len());
        for (c, name) in schema.iter().enumerate() {
            let cell = row.get(c + 1).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| bad(line, name, format!("`{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(bad(line, name, format!("`{cell}` is not finite")));
            }
            covariates.push(v);
        }
        out.push(Unit { unit_id: id, covariates });
    }
    Ok((schema, out))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoefficientsDoc {
    #[serde(default)]
    covariates: Vec<String>,
    coefficients: BTreeMap<String, f64>,
}

/// Coefficients keyed by the labels of the coefficient table, e.g.
/// `"Discount[Level3]"` or `"Discount[Level3]:spend"`. Missing terms are 0.
pub fn coefficients(ctx: &mut RunContext, path: &Path, space: &FactorSpace) -> Result<EffectsFit, CliError> {
    let text = ctx.read(path)?;
    let doc: CoefficientsDoc = toml::from_str(&text).map_err(|e| CliError::input(path, e.to_string()))?;
    let blank = EffectsFit::from_coefficients(space.clone(), doc.covariates.clone(), Vec::new()).in_file(path)?;
    let keys = model_keys(space, doc.covariates.len());
    let labels = blank.labels();
    let mut values = Vec::with_capacity(doc.coefficients.len());
    for (name, value) in doc.coefficients {
        let idx = labels
            .iter()
            .position(|l| *l == name)
            .ok_or_else(|| CliError::input(path, format!("unknown coefficient `{name}`")))?;
        values.push((keys[idx], value));
    }
    EffectsFit::from_coefficients(space.clone(), doc.covariates, values).in_file(path)
}

/// Inverse of [`coefficients`], terms in model order.
pub fn coefficients_toml(fit: &EffectsFit) -> String {
    let quote = |s: &str| toml::Value::String(s.to_string()).to_string();
    let covs: Vec<String> = fit.covariates().iter().map(|c| quote(c)).collect();
    let mut out = format!("covariates = [{}]\n\n[coefficients]\n", covs.join(", "));
    for (label, value) in fit.labels().iter().zip(fit.coefficients()) {
        out.push_str(&format!("{} = {}\n", quote(label), toml::Value::Float(*value)));
    }
    out
}

pub fn variant(space: &FactorSpace, text: &str) -> Result<Variant, CliError> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    space
        .variant_from_names(&parts)
        .map_err(|e| CliError::Invalid(format!("variant `{text}`: {e}")))
}

pub fn point(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Invalid(format!("`{s}` in `{text}` is not a number")))
        })
        .collect()
}

/// `lo..hi`, both ends included.
pub fn int_range(text: &str) -> Result<Vec<i64>, CliError> {
    let err = || CliError::Invalid(format!("grid `{text}` is not of the form lo..hi"));
    let (lo, hi) = text.split_once("..").ok_or_else(err)?;
    let (lo, hi): (i64, i64) = (lo.trim().parse().map_err(|_| err())?, hi.trim().parse().map_err(|_| err())?);
    if hi < lo {
        return Err(CliError::Invalid(format!("grid `{text}` is empty")));
    }
    Ok((lo..=hi).collect())
}
