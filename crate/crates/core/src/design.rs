//! Experimental designs over a [`FactorSpace`] and their balance audit.
//!
//! A design is a set of distinct variant runs with allocation weights and a
//! role (in-sample, holdout or control). Generators cover full factorials,
//! regular two-level fractions from defining words, Plackett-Burman arrays and
//! a seeded search for mixed-level fractions with proportional frequencies.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor_space::{factor_letter, Factor, FactorSpace, Variant};
use crate::rng::{stream, Stream};

const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunRole {
    InSample,
    Holdout,
    Control,
}

impl fmt::Display for RunRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunRole::InSample => "in_sample",
            RunRole::Holdout => "holdout",
            RunRole::Control => "control",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub variant: Variant,
    pub weight: f64,
    pub role: RunRole,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    space: FactorSpace,
    runs: Vec<Run>,
    generator_spec: Option<String>,
}

impl Design {
    pub fn new(space: FactorSpace, runs: Vec<Run>, generator_spec: Option<String>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::InvalidDesign("design has no runs".into()));
        }
        let mut seen = HashSet::new();
        let mut holdouts = 0;
        let mut total = 0.0;
        for run in &runs {
            space.validate_variant(&run.variant)?;
            if !seen.insert(&run.variant) {
                return Err(Error::InvalidDesign(format!(
                    "variant {} appears more than once",
                    space.variant_label(&run.variant)
                )));
            }
            if !(run.weight.is_finite() && run.weight >= 0.0) {
                return Err(Error::InvalidDesign(format!(
                    "run {} has invalid weight {}",
                    space.variant_label(&run.variant),
                    run.weight
                )));
            }
            match run.role {
                RunRole::Holdout => holdouts += 1,
                RunRole::Control => continue,
                RunRole::InSample => {}
            }
            total += run.weight;
        }
        if holdouts > 1 {
            return Err(Error::InvalidDesign(format!(
                "at most one holdout run is allowed, found {holdouts}"
            )));
        }
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::InvalidDesign(format!(
                "weights of non-control runs sum to {total}, expected 1"
            )));
        }
        Ok(Design {
            space,
            runs,
            generator_spec,
        })
    }

    /// Equal-weight in-sample design over the given variants.
    pub fn equal_weight(space: FactorSpace, variants: Vec<Variant>) -> Result<Self> {
        let w = 1.0 / variants.len().max(1) as f64;
        let runs = variants
            .into_iter()
            .map(|variant| Run {
                variant,
                weight: w,
                role: RunRole::InSample,
            })
            .collect();
        Design::new(space, runs, None)
    }

    pub fn space(&self) -> &FactorSpace {
        &self.space
    }

    pub fn runs(&self) -> &[Run] {
        &self.runs
    }

    pub fn generator_spec(&self) -> Option<&str> {
        self.generator_spec.as_deref()
    }

    pub fn in_sample_runs(&self) -> impl Iterator<Item = &Run> {
        self.runs.iter().filter(|r| r.role == RunRole::InSample)
    }

    pub fn holdout(&self) -> Option<&Run> {
        self.runs.iter().find(|r| r.role == RunRole::Holdout)
    }

    pub fn run_for(&self, variant: &Variant) -> Option<&Run> {
        self.runs.iter().find(|r| &r.variant == variant)
    }

    pub fn role_of(&self, variant: &Variant) -> Option<RunRole> {
        self.run_for(variant).map(|r| r.role)
    }

    pub fn total_weight(&self) -> f64 {
        self.runs.iter().map(|r| r.weight).sum()
    }

    /// Probability that a randomized unit receives `variant`: its weight over
    /// the weight of all runs, control included. Zero if absent.
    pub fn assignment_probability(&self, variant: &Variant) -> f64 {
        self.run_for(variant)
            .map(|r| r.weight / self.total_weight())
            .unwrap_or(0.0)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: DesignDoc = toml::from_str(text)?;
        let space = doc.space;
        let runs = doc
            .runs
            .iter()
            .map(|r| {
                Ok(Run {
                    variant: space.variant_from_names(&r.levels)?,
                    weight: r.weight,
                    role: r.role,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Design::new(space, runs, doc.generator_spec)
    }

    pub fn to_toml_string(&self) -> String {
        let doc = DesignDoc {
            generator_spec: self.generator_spec.clone(),
            space: self.space.clone(),
            runs: self
                .runs
                .iter()
                .map(|r| RunDoc {
                    levels: self
                        .space
                        .level_names(&r.variant)
                        .into_iter()
                        .map(String::from)
                        .collect(),
                    weight: r.weight,
                    role: r.role,
                })
                .collect(),
        };
        toml::to_string(&doc).expect("design serializes to TOML")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunDoc {
    levels: Vec<String>,
    weight: f64,
    role: RunRole,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    generator_spec: Option<String>,
    space: FactorSpace,
    runs: Vec<RunDoc>,
}

/// Contingency table for one factor pair, weighted run counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairTable {
    pub factor_a: usize,
    pub factor_b: usize,
    pub counts: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceReport {
    /// Weighted in-sample run count N (weights rescaled so equal weights give 1 per run).
    pub run_count: f64,
    pub level_counts: Vec<Vec<f64>>,
    pub pair_tables: Vec<PairTable>,
    pub proportional_frequencies_ok: bool,
    /// max over pairs and cells of |n_ij − n_i·n_j / N|.
    pub max_proportionality_deviation: f64,
    /// Two-level regular designs only; `None` for full factorials.
    pub resolution: Option<usize>,
    /// Signed defining words, e.g. `+ABC`; two-level regular designs only.
    pub defining_relation: Vec<String>,
    /// Cosets of the defining relation (two-level regular designs only).
    pub alias_groups: Vec<Vec<String>>,
}

impl BalanceReport {
    /// Per-factor level counts rounded to integers.
    pub fn balance_vector(&self) -> Vec<Vec<usize>> {
        self.level_counts
            .iter()
            .map(|c| c.iter().map(|x| x.round() as usize).collect())
            .collect()
    }
}

impl fmt::Display for BalanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "runs (weighted): {}", fmt_num(self.run_count))?;
        for (i, counts) in self.level_counts.iter().enumerate() {
            let c: Vec<String> = counts.iter().map(|x| fmt_num(*x)).collect();
            writeln!(f, "factor {}: level counts [{}]", factor_letter(i), c.join(", "))?;
        }
        writeln!(
            f,
            "proportional frequencies: {} (max deviation {})",
            if self.proportional_frequencies_ok { "yes" } else { "no" },
            fmt_num(self.max_proportionality_deviation)
        )?;
        if let Some(r) = self.resolution {
            writeln!(f, "resolution: {}", roman(r))?;
        }
        if !self.defining_relation.is_empty() {
            writeln!(f, "defining relation: I = {}", self.defining_relation.join(" = "))?;
        }
        for group in &self.alias_groups {
            writeln!(f, "alias: {}", group.join(" = "))?;
        }
        Ok(())
    }
}

fn fmt_num(x: f64) -> String {
    if x == x.round() && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x:.6}")
    }
}

fn roman(r: usize) -> String {
    match r {
        1 => "I".into(),
        2 => "II".into(),
        3 => "III".into(),
        4 => "IV".into(),
        5 => "V".into(),
        6 => "VI".into(),
        7 => "VII".into(),
        8 => "VIII".into(),
        n => n.to_string(),
    }
}

pub fn full_factorial(space: &FactorSpace) -> Design {
    Design::equal_weight(space.clone(), space.enumerate_variants())
        .expect("full factorial is a valid design")
        .with_spec("full factorial")
}

impl Design {
    fn with_spec(mut self, spec: impl Into<String>) -> Self {
        self.generator_spec = Some(spec.into());
        self
    }
}

/// Parses a defining word such as `ABC`, `-ABC` or `D=ABC` into
/// (factor bitmask, sign).
fn parse_word(word: &str, factor_count: usize) -> Result<(u64, i8)> {
    let letters: Vec<String> = (0..factor_count).map(factor_letter).collect();
    let (mut body, mut sign) = (word.trim().to_string(), 1i8);
    let mut extra = 0u64;
    if let Some((lhs, rhs)) = body.clone().split_once('=') {
        let (m, s) = parse_word(lhs, factor_count)?;
        extra = m;
        sign *= s;
        body = rhs.trim().to_string();
    }
    if let Some(rest) = body.strip_prefix('-') {
        sign = -sign;
        body = rest.to_string();
    } else if let Some(rest) = body.strip_prefix('+') {
        body = rest.to_string();
    }
    let chars: Vec<char> = body.chars().filter(|c| !c.is_whitespace()).collect();
    let mut mask = 0u64;
    let mut i = 0;
    while i < chars.len() {
        if !chars[i].is_ascii_uppercase() {
            return Err(Error::InvalidParameter(format!(
                "bad character `{}` in generator `{word}`",
                chars[i]
            )));
        }
        let mut tok = chars[i].to_string();
        i += 1;
        while i < chars.len() && chars[i].is_ascii_digit() {
            tok.push(chars[i]);
            i += 1;
        }
        let idx = letters.iter().position(|l| *l == tok).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "generator `{word}` names factor `{tok}` but there are only {factor_count} factors"
            ))
        })?;
        mask ^= 1 << idx;
    }
    let mask = mask ^ extra;
    if mask == 0 {
        return Err(Error::InvalidParameter(format!(
            "generator `{word}` reduces to the identity"
        )));
    }
    Ok((mask, sign))
}

fn word_label(mask: u64, factor_count: usize) -> String {
    (0..factor_count)
        .filter(|i| mask & (1 << i) != 0)
        .map(factor_letter)
        .collect()
}

/// ±1 code of a two-level factor: baseline level is −1.
fn two_level_code(factor: &Factor, level: usize) -> i8 {
    if level == factor.baseline_index() {
        -1
    } else {
        1
    }
}

/// 2^(p−q) fraction of a two-level full factorial defined by q independent
/// generator words; each word's product of ±1 codes equals its sign on every run.
pub fn regular_two_level_fraction<S: AsRef<str>>(
    space: &FactorSpace,
    generators: &[S],
) -> Result<Design> {
    let p = space.factor_count();
    if let Some(f) = space.factors().iter().find(|f| f.level_count() != 2) {
        return Err(Error::InvalidParameter(format!(
            "factor `{}` has {} levels; regular fractions need two-level factors",
            f.name(),
            f.level_count()
        )));
    }
    if p > 24 {
        return Err(Error::InvalidParameter(format!(
            "{p} factors is beyond the supported 24"
        )));
    }
    let words = generators
        .iter()
        .map(|g| parse_word(g.as_ref(), p))
        .collect::<Result<Vec<_>>>()?;
    let group = closure(&words.iter().map(|w| w.0).collect::<Vec<_>>());
    if group.len() != 1 << words.len() {
        return Err(Error::InvalidParameter(
            "generators are not independent: their closure collapses".into(),
        ));
    }
    let variants: Vec<Variant> = space
        .enumerate_variants()
        .into_iter()
        .filter(|v| {
            words.iter().all(|&(mask, sign)| {
                let prod: i8 = (0..p)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| two_level_code(space.factor(i), v.level(i)))
                    .product();
                prod == sign
            })
        })
        .collect();
    debug_assert_eq!(variants.len(), 1 << (p - words.len()));
    let spec = if words.is_empty() {
        "full factorial".to_string()
    } else {
        let w: Vec<String> = words
            .iter()
            .map(|&(m, s)| format!("{}{}", if s < 0 { "-" } else { "" }, word_label(m, p)))
            .collect();
        format!("I = {}", w.join(" = "))
    };
    Ok(Design::equal_weight(space.clone(), variants)?.with_spec(spec))
}

/// Subgroup of (Z_2)^p generated by the masks, identity included.
fn closure(gens: &[u64]) -> BTreeSet<u64> {
    let mut group = BTreeSet::from([0u64]);
    for &g in gens {
        let next: Vec<u64> = group.iter().map(|&x| x ^ g).collect();
        group.extend(next);
    }
    group
}

/// First rows of the cyclic Plackett-Burman constructions, `+` = high.
fn pb_first_row(run_count: usize) -> Option<&'static str> {
    match run_count {
        4 => Some("++-"),
        8 => Some("+++-+--"),
        12 => Some("++-+++---+-"),
        20 => Some("++--++++-+-+----++-"),
        24 => Some("+++++-+-++--++--+-+----"),
        _ => None,
    }
}

/// Plackett-Burman ±1 matrix (rows = runs, columns = factors).
pub fn plackett_burman_matrix(factor_count: usize, run_count: usize) -> Result<Vec<Vec<i8>>> {
    let first = pb_first_row(run_count).ok_or(Error::UnsupportedRunCount(run_count))?;
    if factor_count == 0 || factor_count > run_count - 1 {
        return Err(Error::InvalidParameter(format!(
            "{run_count}-run Plackett-Burman supports 1..={} factors, got {factor_count}",
            run_count - 1
        )));
    }
    let base: Vec<i8> = first.chars().map(|c| if c == '+' { 1 } else { -1 }).collect();
    let n = base.len();
    let mut rows = Vec::with_capacity(run_count);
    for shift in 0..n {
        rows.push((0..factor_count).map(|j| base[(j + n - shift) % n]).collect());
    }
    rows.push(vec![-1; factor_count]);
    Ok(rows)
}

/// Plackett-Burman design on factors `A`, `B`, ... with levels `-1`/`+1`.
/// Repeated rows (possible when few columns are used) are merged into one
/// run carrying their combined weight.
pub fn plackett_burman(factor_count: usize, run_count: usize) -> Result<Design> {
    let matrix = plackett_burman_matrix(factor_count, run_count)?;
    let factors = (0..factor_count)
        .map(|i| Factor::from_strs(&factor_letter(i), &["-1", "+1"], Some("-1")))
        .collect::<Result<Vec<_>>>()?;
    let space = FactorSpace::new(factors)?;
    let mut weights: BTreeMap<Variant, f64> = BTreeMap::new();
    let mut order = Vec::new();
    for row in &matrix {
        let v = Variant(row.iter().map(|&x| usize::from(x > 0)).collect());
        if !weights.contains_key(&v) {
            order.push(v.clone());
        }
        *weights.entry(v).or_insert(0.0) += 1.0;
    }
    let runs = order
        .into_iter()
        .map(|v| Run {
            weight: weights[&v] / run_count as f64,
            variant: v,
            role: RunRole::InSample,
        })
        .collect();
    Design::new(space, runs, Some(format!("Plackett-Burman N={run_count}")))
}

/// Outcome of [`mixed_level_fraction`].
#[derive(Debug, Clone)]
pub struct FractionSearch {
    pub design: Design,
    pub report: BalanceReport,
    /// True when every factor pair has exactly proportional frequencies.
    pub proportional: bool,
    pub restarts: usize,
}

/// Search objective, compared lexicographically: missing levels, squared
/// proportionality deviation (scaled by N² to stay integral), marginal
/// imbalance, then a preference for surplus runs on non-baseline levels in
/// declaration order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct SearchKey {
    missing_levels: usize,
    proportionality: i64,
    imbalance: i64,
    preference: Vec<i64>,
}

struct SearchContext<'a> {
    space: &'a FactorSpace,
    candidates: Vec<Variant>,
    n: i64,
}

impl SearchContext<'_> {
    fn key(&self, selected: &[usize]) -> SearchKey {
        let counts = self.space.level_counts();
        let f = counts.len();
        let mut margins: Vec<Vec<i64>> = counts.iter().map(|&l| vec![0; l]).collect();
        let mut pairs: Vec<Vec<i64>> = Vec::with_capacity(f * f);
        for a in 0..f {
            for b in 0..f {
                pairs.push(if a < b { vec![0; counts[a] * counts[b]] } else { Vec::new() });
            }
        }
        for &s in selected {
            let v = &self.candidates[s];
            for a in 0..f {
                margins[a][v.level(a)] += 1;
                for b in (a + 1)..f {
                    pairs[a * f + b][v.level(a) * counts[b] + v.level(b)] += 1;
                }
            }
        }
        let n = self.n;
        let mut proportionality = 0i64;
        for a in 0..f {
            for b in (a + 1)..f {
                let table = &pairs[a * f + b];
                for i in 0..counts[a] {
                    for j in 0..counts[b] {
                        let d = table[i * counts[b] + j] * n - margins[a][i] * margins[b][j];
                        proportionality += d * d;
                    }
                }
            }
        }
        let mut missing_levels = 0;
        let mut imbalance = 0i64;
        let mut preference = Vec::new();
        for (fi, m) in margins.iter().enumerate() {
            let l = m.len() as i64;
            let baseline = self.space.factor(fi).baseline_index();
            for (li, &c) in m.iter().enumerate() {
                if c == 0 {
                    missing_levels += 1;
                }
                let d = c * l - n;
                imbalance += d * d;
                if li != baseline {
                    preference.push(-c);
                }
            }
        }
        SearchKey {
            missing_levels,
            proportionality,
            imbalance,
            preference,
        }
    }
}

/// Compositions of `n` into `parts` positive integers.
fn compositions(n: usize, parts: usize, limit: usize) -> Option<Vec<Vec<usize>>> {
    fn rec(n: usize, parts: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>, limit: usize) -> bool {
        if out.len() > limit {
            return false;
        }
        if parts == 1 {
            if n >= 1 {
                cur.push(n);
                out.push(cur.clone());
                cur.pop();
            }
            return true;
        }
        for first in 1..=n.saturating_sub(parts - 1) {
            cur.push(first);
            let ok = rec(n - first, parts - 1, cur, out, limit);
            cur.pop();
            if !ok {
                return false;
            }
        }
        true
    }
    let mut out = Vec::new();
    if rec(n, parts, &mut Vec::new(), &mut out, limit) {
        Some(out)
    } else {
        None
    }
}

/// Whether some pair of all-levels-present margins admits proportional
/// two-way frequencies (n_i·m_j divisible by N for every cell). `None` when
/// the enumeration is too large to decide.
fn pair_feasible(n: usize, la: usize, lb: usize) -> Option<bool> {
    const LIMIT: usize = 20_000;
    let ca = compositions(n, la, LIMIT)?;
    let cb = compositions(n, lb, LIMIT)?;
    let ok_b: Vec<&Vec<usize>> = cb.iter().collect();
    Some(ca.iter().any(|a| {
        ok_b.iter()
            .any(|b| a.iter().all(|&x| b.iter().all(|&y| (x * y) % n == 0)))
    }))
}

pub const DEFAULT_RESTARTS: usize = 256;

/// Seeded search for `target_runs` distinct variants with proportional
/// frequencies: random restarts, each followed by first-improvement swap
/// descent (scan order: selected position, then candidate index).
pub fn mixed_level_fraction(
    space: &FactorSpace,
    target_runs: usize,
    seed: u64,
) -> Result<FractionSearch> {
    mixed_level_fraction_with(space, target_runs, seed, DEFAULT_RESTARTS)
}

pub fn mixed_level_fraction_with(
    space: &FactorSpace,
    target_runs: usize,
    seed: u64,
    restarts: usize,
) -> Result<FractionSearch> {
    let total = space.variant_count();
    if target_runs >= total {
        return Err(Error::InvalidParameter(format!(
            "target_runs {target_runs} must be below the variant count {total}"
        )));
    }
    let max_levels = space.level_counts().into_iter().max().unwrap_or(0);
    if target_runs < max_levels {
        return Err(Error::Infeasible(format!(
            "{target_runs} runs cannot cover all {max_levels} levels of a factor"
        )));
    }
    let counts = space.level_counts();
    for a in 0..counts.len() {
        for b in (a + 1)..counts.len() {
            if pair_feasible(target_runs, counts[a], counts[b]) == Some(false) {
                return Err(Error::Infeasible(format!(
                    "{target_runs} runs cannot give proportional frequencies between factors `{}` ({} levels) and `{}` ({} levels)",
                    space.factor(a).name(),
                    counts[a],
                    space.factor(b).name(),
                    counts[b]
                )));
            }
        }
    }
    let ctx = SearchContext {
        space,
        candidates: space.enumerate_variants(),
        n: target_runs as i64,
    };
    let mut rng = stream(seed, Stream::DesignSearch, 0);
    let mut best: Option<(SearchKey, Vec<usize>)> = None;
    let pool: Vec<usize> = (0..total).collect();
    for _ in 0..restarts.max(1) {
        let mut shuffled = pool.clone();
        shuffled.shuffle(&mut rng);
        let mut selected: Vec<usize> = shuffled[..target_runs].to_vec();
        let mut in_set = vec![false; total];
        for &s in &selected {
            in_set[s] = true;
        }
        let mut current = ctx.key(&selected);
        'descent: loop {
            for pos in 0..target_runs {
                for cand in 0..total {
                    if in_set[cand] {
                        continue;
                    }
                    let old = selected[pos];
                    selected[pos] = cand;
                    let k = ctx.key(&selected);
                    if k < current {
                        in_set[old] = false;
                        in_set[cand] = true;
                        current = k;
                        continue 'descent;
                    }
                    selected[pos] = old;
                }
            }
            break;
        }
        let better = match &best {
            None => true,
            Some((bk, _)) => current.cmp(bk) == Ordering::Less,
        };
        if better {
            best = Some((current, selected));
        }
    }
    let (_, mut chosen) = best.expect("at least one restart");
    chosen.sort_unstable();
    let variants: Vec<Variant> = chosen.iter().map(|&i| ctx.candidates[i].clone()).collect();
    let design = Design::equal_weight(space.clone(), variants)?
        .with_spec(format!("mixed-level search N={target_runs} seed={seed}"));
    let report = check_design(&design);
    Ok(FractionSearch {
        proportional: report.proportional_frequencies_ok,
        report,
        design,
        restarts: restarts.max(1),
    })
}

/// Balance audit over in-sample runs.
pub fn check_design(design: &Design) -> BalanceReport {
    let space = design.space();
    let runs: Vec<&Run> = design.in_sample_runs().collect();
    let counts = space.level_counts();
    let f = counts.len();
    let total_w: f64 = runs.iter().map(|r| r.weight).sum();
    let n = runs.len() as f64;
    // rescale so equal weights give unit counts
    let scale = if total_w > 0.0 { n / total_w } else { 0.0 };

    let mut level_counts: Vec<Vec<f64>> = counts.iter().map(|&l| vec![0.0; l]).collect();
    for r in &runs {
        for a in 0..f {
            level_counts[a][r.variant.level(a)] += r.weight * scale;
        }
    }
    let mut pair_tables = Vec::new();
    let mut ok = true;
    let mut max_dev = 0.0f64;
    for a in 0..f {
        for b in (a + 1)..f {
            let mut table = vec![vec![0.0; counts[b]]; counts[a]];
            for r in &runs {
                table[r.variant.level(a)][r.variant.level(b)] += r.weight * scale;
            }
            for i in 0..counts[a] {
                for j in 0..counts[b] {
                    let expected = level_counts[a][i] * level_counts[b][j];
                    let lhs = table[i][j] * n;
                    if (lhs - expected).abs() > 1e-9 * n * n.max(1.0) {
                        ok = false;
                    }
                    if n > 0.0 {
                        max_dev = max_dev.max((table[i][j] - expected / n).abs());
                    }
                }
            }
            pair_tables.push(PairTable {
                factor_a: a,
                factor_b: b,
                counts: table,
            });
        }
    }

    let (resolution, defining_relation, alias_groups) = two_level_structure(space, &runs);
    BalanceReport {
        run_count: n,
        level_counts,
        pair_tables,
        proportional_frequencies_ok: ok,
        max_proportionality_deviation: max_dev,
        resolution,
        defining_relation,
        alias_groups,
    }
}

/// Defining relation, resolution and alias cosets for equal-weight,
/// all-two-level, regular (2^(p−q)-run) designs.
fn two_level_structure(
    space: &FactorSpace,
    runs: &[&Run],
) -> (Option<usize>, Vec<String>, Vec<Vec<String>>) {
    let p = space.factor_count();
    let none = (None, Vec::new(), Vec::new());
    if p > 16 || runs.is_empty() || space.factors().iter().any(|f| f.level_count() != 2) {
        return none;
    }
    let n = runs.len();
    if !n.is_power_of_two() || runs.iter().any(|r| (r.weight - runs[0].weight).abs() > WEIGHT_TOL) {
        return none;
    }
    let codes: Vec<Vec<i8>> = runs
        .iter()
        .map(|r| {
            (0..p)
                .map(|i| two_level_code(space.factor(i), r.variant.level(i)))
                .collect()
        })
        .collect();
    let mut words: Vec<(u64, i8)> = Vec::new();
    for mask in 1u64..(1 << p) {
        let mut sign = None;
        let mut constant = true;
        for row in &codes {
            let prod: i8 = (0..p).filter(|i| mask & (1 << i) != 0).map(|i| row[i]).product();
            match sign {
                None => sign = Some(prod),
                Some(s) if s != prod => {
                    constant = false;
                    break;
                }
                _ => {}
            }
        }
        if constant {
            words.push((mask, sign.unwrap_or(1)));
        }
    }
    // regular iff |defining group| · N = 2^p
    if (words.len() + 1) * n != 1 << p {
        return none;
    }
    if words.is_empty() {
        return none;
    }
    let resolution = words.iter().map(|(m, _)| m.count_ones() as usize).min();
    let mut sorted_words = words.clone();
    sorted_words.sort_by_key(|&(m, _)| (m.count_ones(), word_label(m, p)));
    let relation = sorted_words
        .iter()
        .map(|&(m, s)| format!("{}{}", if s < 0 { "-" } else { "+" }, word_label(m, p)))
        .collect();
    let group: Vec<u64> = std::iter::once(0).chain(words.iter().map(|w| w.0)).collect();
    let mut seen = HashSet::new();
    let mut groups = Vec::new();
    let mut effects: Vec<u64> = (1u64..(1 << p)).filter(|m| !group.contains(m)).collect();
    effects.sort_by_key(|&m| (m.count_ones(), word_label(m, p)));
    for e in effects {
        if seen.contains(&e) {
            continue;
        }
        let mut coset: Vec<u64> = group.iter().map(|&g| g ^ e).collect();
        coset.sort_by_key(|&m| (m.count_ones(), word_label(m, p)));
        for &c in &coset {
            seen.insert(c);
        }
        groups.push(coset.into_iter().map(|m| word_label(m, p)).collect());
    }
    (resolution, relation, groups)
}

/// Picks a variant uniformly from those not in the design and appends it as
/// the holdout run. Existing non-control weights are scaled by k/(k+1) and the
/// holdout receives 1/(k+1), k being the number of non-control runs.
pub fn select_holdout(design: &Design, seed: u64) -> Result<(Design, Variant)> {
    if design.holdout().is_some() {
        return Err(Error::InvalidDesign("design already has a holdout run".into()));
    }
    let space = design.space();
    let used: HashSet<&Variant> = design.runs().iter().map(|r| &r.variant).collect();
    let excluded: Vec<Variant> = space
        .enumerate_variants()
        .into_iter()
        .filter(|v| !used.contains(v))
        .collect();
    if excluded.is_empty() {
        return Err(Error::InvalidDesign(
            "design covers every variant; nothing left to hold out".into(),
        ));
    }
    let mut rng = stream(seed, Stream::Holdout, 0);
    let pick = excluded[rng.random_range(0..excluded.len())].clone();
    let k = design.runs().iter().filter(|r| r.role != RunRole::Control).count() as f64;
    let mut runs: Vec<Run> = design
        .runs()
        .iter()
        .map(|r| Run {
            weight: if r.role == RunRole::Control { r.weight } else { r.weight * k / (k + 1.0) },
            ..r.clone()
        })
        .collect();
    runs.push(Run {
        variant: pick.clone(),
        weight: 1.0 / (k + 1.0),
        role: RunRole::Holdout,
    });
    // rounding of k/(k+1) can leave the sum a few ulps off
    let sum: f64 = runs.iter().filter(|r| r.role != RunRole::Control).map(|r| r.weight).sum();
    for r in runs.iter_mut().filter(|r| r.role != RunRole::Control) {
        r.weight /= sum;
    }
    Ok((
        Design::new(space.clone(), runs, design.generator_spec.clone())?,
        pick,
    ))
}
