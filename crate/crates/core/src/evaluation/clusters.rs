//! Cluster quality measures on embeddings and multi-year consistency.

use crate::castc::Points;
use crate::error::{Error, Result};
use crate::raster::{LabelMask, CLASS_CASHEW};

/// Mean vector and pooled spread `sqrt(mean_d var_d)` (population
/// variances) of a cluster.
fn moments(p: &Points) -> Result<(Vec<f64>, f64)> {
    let n = p.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!("cluster of {n} point(s) has no spread")));
    }
    let d = p.dim;
    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(p.row(i)) {
            *m += f64::from(v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = 0.0f64;
    for i in 0..n {
        for (m, &v) in mean.iter().zip(p.row(i)) {
            var += (f64::from(v) - m).powi(2);
        }
    }
    let sigma = (var / (n as f64 * d as f64)).sqrt();
    Ok((mean, sigma))
}

/// `|mu_i - mu_j| / (sigma_i + sigma_j)`.
pub fn separability_index(a: &Points, b: &Points) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::ShapeMismatch("clusters differ in dimension".into()));
    }
    let (ma, sa) = moments(a)?;
    let (mb, sb) = moments(b)?;
    let dist = ma.iter().zip(&mb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    if sa + sb == 0.0 {
        return if dist == 0.0 { Ok(0.0) } else { Ok(f64::INFINITY) };
    }
    Ok(dist / (sa + sb))
}

/// `sigma / |mu|`.
pub fn coefficient_of_variation(a: &Points) -> Result<f64> {
    let (m, s) = moments(a)?;
    let norm = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::UndefinedCv);
    }
    Ok(s / norm)
}

/// Members of each cluster as separate point sets.
pub fn split_clusters(points: &Points, assignments: &[usize], k: usize) -> Vec<Points> {
    let mut rows: Vec<Vec<f32>> = vec![Vec::new(); k];
    for (i, &a) in assignments.iter().enumerate() {
        rows[a].extend_from_slice(points.row(i));
    }
    rows.into_iter().map(|v| Points { dim: points.dim, values: v }).collect()
}

/// Separability of every pair of clusters with at least two members.
pub fn pairwise_separability(points: &Points, assignments: &[usize], k: usize) -> Result<Vec<(usize, usize, f64)>> {
    let groups = split_clusters(points, assignments, k);
    let mut out = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            if groups[i].len() >= 2 && groups[j].len() >= 2 {
                out.push((i, j, separability_index(&groups[i], &groups[j])?));
            }
        }
    }
    Ok(out)
}

/// Share of sample points mapped as cashew in some year that are cashew
/// in every year.
pub fn temporal_consistency(maps: &[LabelMask], points: &[(usize, usize)]) -> Result<f64> {
    let first = maps.first().ok_or_else(|| Error::InvalidArgument("no maps".into()))?;
    if maps.iter().any(|m| !m.same_extent(first)) {
        return Err(Error::ShapeMismatch("maps differ in extent".into()));
    }
    let mut ever = 0usize;
    let mut always = 0usize;
    for &(r, c) in points {
        if r >= first.height() || c >= first.width() {
            return Err(Error::InvalidArgument(format!("point ({r}, {c}) outside the maps")));
        }
        let n = maps.iter().filter(|m| m.get(r, c) == CLASS_CASHEW).count();
        if n > 0 {
            ever += 1;
            if n == maps.len() {
                always += 1;
            }
        }
    }
    if ever == 0 {
        return Err(Error::InsufficientData("no sample point is ever mapped as cashew".into()));
    }
    Ok(always as f64 / ever as f64)
}
