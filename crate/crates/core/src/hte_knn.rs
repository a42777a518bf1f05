//! Causal K-nearest-neighbour CATE estimates and transformed-outcome tuning.
//!
//! Distances are Euclidean on covariates z-scored with the dataset's own
//! mean and standard deviation. Equal distances are ordered by unit id.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::factor_space::Variant;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CateEstimate {
    pub x: Vec<f64>,
    pub variant_a: Variant,
    pub variant_b: Variant,
    pub k: usize,
    pub tau_hat: f64,
}

#[derive(Debug, Clone)]
struct ArmPoints {
    ids: Vec<String>,
    points: Vec<Vec<f64>>,
    outcomes: Vec<f64>,
}

impl ArmPoints {
    fn len(&self) -> usize {
        self.ids.len()
    }

    /// Outcomes of the arm's units ordered by distance to `q` (ties by id),
    /// truncated to `k`, skipping index `skip`.
    fn nearest_outcomes(&self, q: &[f64], k: usize, skip: Option<usize>) -> Vec<f64> {
        let mut d: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != skip)
            .map(|(i, p)| (sq_dist(p, q), i))
            .collect();
        // indices follow id order, so (distance, index) is the tie rule
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        let k = k.min(d.len());
        if k < d.len() && k > 0 {
            d.select_nth_unstable_by(k - 1, cmp);
            d.truncate(k);
        }
        d.sort_unstable_by(cmp);
        d.into_iter().take(k).map(|(_, i)| self.outcomes[i]).collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Neighbour index over two arms of a dataset.
#[derive(Debug, Clone)]
pub struct KnnCate {
    covariates: Vec<String>,
    means: Vec<f64>,
    sds: Vec<f64>,
    a: Variant,
    b: Variant,
    arm_a: ArmPoints,
    arm_b: ArmPoints,
    /// Pr(a | a or b) from the design weights.
    p: f64,
}

impl KnnCate {
    pub fn new<S: AsRef<str>>(data: &Dataset, covariates: &[S], a: &Variant, b: &Variant) -> Result<Self> {
        if a == b {
            return Err(Error::InvalidParameter("the two variants must differ".into()));
        }
        let design = data.design();
        for v in [a, b] {
            if design.run_for(v).is_none() {
                return Err(Error::InvalidVariant(format!(
                    "{} is not an arm of the design",
                    design.space().variant_label(v)
                )));
            }
        }
        let idx = data.covariate_indices(covariates)?;
        let names = covariates.iter().map(|s| s.as_ref().to_string()).collect();
        let n = data.len().max(1) as f64;
        let means: Vec<f64> = idx
            .iter()
            .map(|&c| data.records().iter().map(|r| r.covariates[c]).sum::<f64>() / n)
            .collect();
        let sds: Vec<f64> = idx
            .iter()
            .zip(&means)
            .map(|(&c, m)| {
                let v = data.records().iter().map(|r| (r.covariates[c] - m).powi(2)).sum::<f64>()
                    / (n - 1.0).max(1.0);
                if v > 0.0 { v.sqrt() } else { 1.0 }
            })
            .collect();
        let arm = |v: &Variant| {
            let mut rows: Vec<_> = data.arm(v).collect();
            rows.sort_by(|x, y| x.unit_id.cmp(&y.unit_id));
            ArmPoints {
                ids: rows.iter().map(|r| r.unit_id.clone()).collect(),
                points: rows
                    .iter()
                    .map(|r| idx.iter().enumerate().map(|(j, &c)| (r.covariates[c] - means[j]) / sds[j]).collect())
                    .collect(),
                outcomes: rows.iter().map(|r| r.outcome.expect("arm rows are observed")).collect(),
            }
        };
        let (ea, eb) = (design.assignment_probability(a), design.assignment_probability(b));
        Ok(KnnCate {
            arm_a: arm(a),
            arm_b: arm(b),
            covariates: names,
            means,
            sds,
            a: a.clone(),
            b: b.clone(),
            p: ea / (ea + eb),
        })
    }

    pub fn covariates(&self) -> &[String] {
        &self.covariates
    }

    pub fn arm_sizes(&self) -> (usize, usize) {
        (self.arm_a.len(), self.arm_b.len())
    }

    /// Largest admissible K: the smaller arm size.
    pub fn max_k(&self) -> usize {
        self.arm_a.len().min(self.arm_b.len())
    }

    fn scale(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.covariates.len() {
            return Err(Error::DimensionMismatch {
                expected: self.covariates.len(),
                actual: x.len(),
            });
        }
        Ok(x.iter()
            .enumerate()
            .map(|(j, v)| (v - self.means[j]) / self.sds[j])
            .collect())
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.max_k() {
            return Err(Error::InsufficientNeighbors(format!(
                "k = {k} but the arms hold {} and {} observed units",
                self.arm_a.len(),
                self.arm_b.len()
            )));
        }
        Ok(())
    }

    pub fn estimate(&self, x: &[f64], k: usize) -> Result<CateEstimate> {
        self.check_k(k)?;
        let q = self.scale(x)?;
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        let tau = mean(self.arm_a.nearest_outcomes(&q, k, None)) - mean(self.arm_b.nearest_outcomes(&q, k, None));
        Ok(CateEstimate {
            x: x.to_vec(),
            variant_a: self.a.clone(),
            variant_b: self.b.clone(),
            k,
            tau_hat: tau,
        })
    }

    /// Estimates for many queries, computed in parallel; order preserved.
    pub fn estimate_many(&self, xs: &[Vec<f64>], k: usize) -> Result<Vec<CateEstimate>> {
        xs.par_iter().map(|x| self.estimate(x, k)).collect()
    }

    /// (W − p) / (p(1 − p)) · Y for each a-unit then each b-unit, in id order.
    fn transformed(&self) -> Vec<f64> {
        let p = self.p;
        let scale_a = (1.0 - p) / (p * (1.0 - p));
        let scale_b = -p / (p * (1.0 - p));
        self.arm_a
            .outcomes
            .iter()
            .map(|y| scale_a * y)
            .chain(self.arm_b.outcomes.iter().map(|y| scale_b * y))
            .collect()
    }
}

pub fn knn_cate<S: AsRef<str>>(
    data: &Dataset,
    covariates: &[S],
    x: &[f64],
    a: &Variant,
    b: &Variant,
    k: usize,
) -> Result<CateEstimate> {
    KnnCate::new(data, covariates, a, b)?.estimate(x, k)
}

/// Transformed outcome for every observed unit assigned `a` or `b`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransformedOutcome {
    pub unit_ids: Vec<String>,
    pub treated: Vec<bool>,
    pub values: Vec<f64>,
    /// Pr(a | a or b) used for the weighting.
    pub p: f64,
}

impl TransformedOutcome {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Y* = (W − p) / (p(1 − p)) · Y with W = 1 on `a`, p = Pr(a | a or b).
/// Units appear in dataset order.
pub fn transformed_outcome(data: &Dataset, a: &Variant, b: &Variant) -> Result<TransformedOutcome> {
    if a == b {
        return Err(Error::InvalidParameter("the two variants must differ".into()));
    }
    let mut out = TransformedOutcome {
        unit_ids: Vec::new(),
        treated: Vec::new(),
        values: Vec::new(),
        p: 0.0,
    };
    let design = data.design();
    let (ea, eb) = (design.assignment_probability(a), design.assignment_probability(b));
    let p = if ea + eb > 0.0 { ea / (ea + eb) } else { 0.0 };
    for r in data.records() {
        let w = if &r.assigned == a {
            1.0
        } else if &r.assigned == b {
            0.0
        } else {
            continue;
        };
        let Some(y) = r.outcome else { continue };
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidPropensity {
                unit_id: r.unit_id.clone(),
                value: p,
            });
        }
        out.unit_ids.push(r.unit_id.clone());
        out.treated.push(w == 1.0);
        out.values.push((w - p) / (p * (1.0 - p)) * y);
    }
    out.p = p;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneReport {
    pub k: usize,
    /// (K, leave-one-out mean squared error) for every grid value.
    pub losses: Vec<(usize, f64)>,
}

/// Chooses K minimizing mean (Y*_i − τ̂_{−i}(X_i))² where unit i is left out
/// of its own neighbour set. Ties go to the smaller K.
pub fn tune_k<S: AsRef<str>>(
    data: &Dataset,
    covariates: &[S],
    a: &Variant,
    b: &Variant,
    k_grid: &[usize],
) -> Result<TuneReport> {
    if k_grid.is_empty() {
        return Err(Error::InvalidParameter("empty K grid".into()));
    }
    let model = KnnCate::new(data, covariates, a, b)?;
    let limit = model.max_k().saturating_sub(1);
    for &k in k_grid {
        if k == 0 || k > limit {
            return Err(Error::InsufficientNeighbors(format!(
                "grid value {k} exceeds the {limit} neighbours available after leaving one unit out"
            )));
        }
    }
    let k_max = *k_grid.iter().max().expect("nonempty");
    let y_star = model.transformed();
    let queries: Vec<(usize, bool)> = (0..model.arm_a.len())
        .map(|i| (i, true))
        .chain((0..model.arm_b.len()).map(|i| (i, false)))
        .collect();
    // per unit: prefix sums of nearest outcomes in each arm
    let prefix: Vec<(Vec<f64>, Vec<f64>)> = queries
        .par_iter()
        .map(|&(i, in_a)| {
            let q = if in_a { &model.arm_a.points[i] } else { &model.arm_b.points[i] };
            let na = model.arm_a.nearest_outcomes(q, k_max, in_a.then_some(i));
            let nb = model.arm_b.nearest_outcomes(q, k_max, (!in_a).then_some(i));
            (prefix_sums(&na), prefix_sums(&nb))
        })
        .collect();
    let mut losses = Vec::with_capacity(k_grid.len());
    for &k in k_grid {
        let mse = prefix
            .iter()
            .zip(&y_star)
            .map(|((pa, pb), ys)| {
                let tau = pa[k] / k as f64 - pb[k] / k as f64;
                (ys - tau).powi(2)
            })
            .sum::<f64>()
            / y_star.len() as f64;
        losses.push((k, mse));
    }
    let best = losses
        .iter()
        .min_by(|x, y| x.1.partial_cmp(&y.1).unwrap_or(Ordering::Equal).then(x.0.cmp(&y.0)))
        .expect("nonempty grid")
        .0;
    Ok(TuneReport { k: best, losses })
}

fn prefix_sums(v: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len() + 1);
    out.push(0.0);
    let mut acc = 0.0;
    for x in v {
        acc += x;
        out.push(acc);
    }
    out
}
