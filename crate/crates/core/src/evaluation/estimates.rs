//! Stratified confusion matrices, area estimates with standard errors,
//! and accuracy measures.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normal-approximation multiplier for 95% intervals.
pub const Z95: f64 = 1.96;

/// Sample counts by stratum, mapped class and reference class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub strata: usize,
    pub classes: usize,
    /// `counts[(s * classes + predicted) * classes + reference]`.
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(strata: usize, classes: usize) -> Self {
        Self { strata, classes, counts: vec![0; strata * classes * classes] }
    }

    pub fn get(&self, stratum: usize, predicted: usize, reference: usize) -> u64 {
        self.counts[(stratum * self.classes + predicted) * self.classes + reference]
    }

    pub fn add(&mut self, stratum: usize, predicted: usize, reference: usize) {
        self.counts[(stratum * self.classes + predicted) * self.classes + reference] += 1;
    }

    /// Samples in a stratum.
    pub fn stratum_total(&self, stratum: usize) -> u64 {
        let k = self.classes;
        self.counts[stratum * k * k..(stratum + 1) * k * k].iter().sum()
    }

    /// Counts summed over strata, `[predicted][reference]`.
    pub fn pooled(&self) -> Vec<Vec<u64>> {
        let k = self.classes;
        let mut out = vec![vec![0u64; k]; k];
        for s in 0..self.strata {
            for (p, row) in out.iter_mut().enumerate() {
                for (r, v) in row.iter_mut().enumerate() {
                    *v += self.get(s, p, r);
                }
            }
        }
        out
    }
}

/// Tallies labeled sample points. Labels must be class codes below
/// `classes`.
pub fn confusion(reference: &[u8], predicted: &[u8], strata: &[usize], n_strata: usize, classes: usize) -> Result<ConfusionMatrix> {
    if reference.len() != predicted.len() || reference.len() != strata.len() {
        return Err(Error::ShapeMismatch("reference, predicted and strata differ in length".into()));
    }
    let mut m = ConfusionMatrix::new(n_strata, classes);
    for ((&r, &p), &s) in reference.iter().zip(predicted).zip(strata) {
        if r as usize >= classes || p as usize >= classes {
            return Err(Error::InvalidArgument(format!("label pair ({p}, {r}) outside {classes} classes")));
        }
        if s >= n_strata {
            return Err(Error::InvalidArgument(format!("stratum {s} outside {n_strata}")));
        }
        m.add(s, p as usize, r as usize);
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub ci95: f64,
}

impl Estimate {
    fn new(value: f64, var: f64) -> Self {
        let se = var.max(0.0).sqrt();
        Self { value, se, ci95: Z95 * se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassArea {
    pub class: usize,
    pub area: f64,
    /// Exact estimate as `numerator/denominator` in area units.
    pub area_exact: String,
    pub se: f64,
    pub ci95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaEstimate {
    pub total_area: u64,
    pub areas: Vec<ClassArea>,
    pub overall_accuracy: Estimate,
    /// Per mapped class; `None` when the class never appears on the map.
    pub users_accuracy: Vec<Option<Estimate>>,
    /// Per reference class; `None` when the class is estimated absent.
    pub producers_accuracy: Vec<Option<Estimate>>,
}

/// Exact per-class area estimates `sum_h A_h n_hj / n_h`.
pub fn exact_areas(m: &ConfusionMatrix, stratum_areas: &[u64]) -> Result<Vec<BigRational>> {
    check_strata(m, stratum_areas)?;
    let k = m.classes;
    let mut out = vec![BigRational::zero(); k];
    for (h, &area) in stratum_areas.iter().enumerate() {
        let n = m.stratum_total(h);
        if area == 0 {
            continue;
        }
        for (j, acc) in out.iter_mut().enumerate() {
            let nj: u64 = (0..k).map(|p| m.get(h, p, j)).sum();
            *acc += BigRational::new(BigInt::from(area) * BigInt::from(nj), BigInt::from(n));
        }
    }
    Ok(out)
}

fn check_strata(m: &ConfusionMatrix, stratum_areas: &[u64]) -> Result<()> {
    if stratum_areas.len() != m.strata {
        return Err(Error::ShapeMismatch(format!("{} stratum areas for {} strata", stratum_areas.len(), m.strata)));
    }
    for (h, &a) in stratum_areas.iter().enumerate() {
        let n = m.stratum_total(h);
        if a > 0 && n < 2 {
            return Err(Error::InsufficientData(format!("stratum {h} has {n} samples; at least 2 are needed")));
        }
    }
    if stratum_areas.iter().all(|&a| a == 0) {
        return Err(Error::InsufficientData("all strata have zero area".into()));
    }
    Ok(())
}

/// Stratified estimator of a population ratio `R = Y / X` where `y` and
/// `x` are per-sample indicator totals in each stratum.
struct StratumSums {
    w: f64,
    n: f64,
    /// Sample means and (n - 1)-divisor variances/covariance.
    y: f64,
    x: f64,
    syy: f64,
    sxx: f64,
    sxy: f64,
}

fn stratum_sums(w: f64, n: u64, ny: u64, nx: u64, nxy: u64) -> StratumSums {
    // Indicators: y and x are 0/1 per sample and nxy counts samples with both.
    let nf = n as f64;
    let y = ny as f64 / nf;
    let x = nx as f64 / nf;
    let d = nf - 1.0;
    let syy = (ny as f64 - nf * y * y) / d;
    let sxx = (nx as f64 - nf * x * x) / d;
    let sxy = (nxy as f64 - nf * x * y) / d;
    StratumSums { w, n: nf, y, x, syy, sxx, sxy }
}

fn ratio_estimate(sums: &[StratumSums]) -> Option<Estimate> {
    let yhat: f64 = sums.iter().map(|s| s.w * s.y).sum();
    let xhat: f64 = sums.iter().map(|s| s.w * s.x).sum();
    if xhat <= 0.0 {
        return None;
    }
    let r = yhat / xhat;
    let var = sums
        .iter()
        .map(|s| s.w * s.w * (s.syy + r * r * s.sxx - 2.0 * r * s.sxy) / s.n)
        .sum::<f64>()
        / (xhat * xhat);
    Some(Estimate::new(r, var))
}

/// Area, overall/user's/producer's accuracy with standard errors from a
/// stratified sample. Stratum weights are `W_h = A_h / A`.
pub fn stratified_estimates(m: &ConfusionMatrix, stratum_areas: &[u64]) -> Result<AreaEstimate> {
    let exact = exact_areas(m, stratum_areas)?;
    let k = m.classes;
    let total: u64 = stratum_areas.iter().sum();
    let a = total as f64;
    let active: Vec<usize> = (0..m.strata).filter(|&h| stratum_areas[h] > 0).collect();
    let weight = |h: usize| stratum_areas[h] as f64 / a;
    let ref_count = |h: usize, j: usize| -> u64 { (0..k).map(|p| m.get(h, p, j)).sum() };
    let map_count = |h: usize, i: usize| -> u64 { (0..k).map(|r| m.get(h, i, r)).sum() };

    let areas = (0..k)
        .map(|j| {
            let var: f64 = active
                .iter()
                .map(|&h| {
                    let n = m.stratum_total(h) as f64;
                    let p = ref_count(h, j) as f64 / n;
                    weight(h).powi(2) * p * (1.0 - p) / (n - 1.0)
                })
                .sum();
            let se = a * var.sqrt();
            let q = &exact[j];
            ClassArea {
                class: j,
                area: q.to_f64().unwrap_or(f64::NAN),
                area_exact: format!("{}/{}", q.numer(), q.denom()),
                se,
                ci95: Z95 * se,
            }
        })
        .collect();

    let agree = |h: usize| -> u64 { (0..k).map(|c| m.get(h, c, c)).sum() };
    let oa_val: f64 = active.iter().map(|&h| weight(h) * agree(h) as f64 / m.stratum_total(h) as f64).sum();
    let oa_var: f64 = active
        .iter()
        .map(|&h| {
            let n = m.stratum_total(h) as f64;
            let p = agree(h) as f64 / n;
            weight(h).powi(2) * p * (1.0 - p) / (n - 1.0)
        })
        .sum();

    let users = (0..k)
        .map(|i| {
            let sums: Vec<StratumSums> = active
                .iter()
                .map(|&h| {
                    let hit = m.get(h, i, i);
                    stratum_sums(weight(h), m.stratum_total(h), hit, map_count(h, i), hit)
                })
                .collect();
            ratio_estimate(&sums)
        })
        .collect();
    let producers = (0..k)
        .map(|j| {
            let sums: Vec<StratumSums> = active
                .iter()
                .map(|&h| {
                    let hit = m.get(h, j, j);
                    stratum_sums(weight(h), m.stratum_total(h), hit, ref_count(h, j), hit)
                })
                .collect();
            ratio_estimate(&sums)
        })
        .collect();

    Ok(AreaEstimate {
        total_area: total,
        areas,
        overall_accuracy: Estimate::new(oa_val, oa_var),
        users_accuracy: users,
        producers_accuracy: producers,
    })
}

/// F1 of one class from counts pooled over strata.
pub fn f1_score(m: &ConfusionMatrix, class: usize) -> Result<f64> {
    let pooled = m.pooled();
    let k = m.classes;
    let tp = pooled[class][class] as f64;
    let mapped: u64 = pooled[class].iter().sum();
    let actual: u64 = (0..k).map(|p| pooled[p][class]).sum();
    if mapped == 0 || actual == 0 {
        return Err(Error::EmptyClass { class });
    }
    let precision = tp / mapped as f64;
    let recall = tp / actual as f64;
    Ok(if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) })
}

/// Per-class F1; fails if any class is never mapped or never observed.
pub fn f1_scores(m: &ConfusionMatrix) -> Result<Vec<f64>> {
    (0..m.classes).map(|c| f1_score(m, c)).collect()
}
