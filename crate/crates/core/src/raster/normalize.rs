//! Per-area min/max normalization with percentile trimming.
//!
//! Each band of an area is rescaled with `(P - P_min) / (P_max - P_min)`
//! where `P_min`/`P_max` are the low/high percentiles of the valid values
//! pooled over all timesteps. Results are clipped to `[0, 1]`.

use serde::{Deserialize, Serialize};

use super::RasterStack;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub area_id: String,
    pub p_min: Vec<f32>,
    pub p_max: Vec<f32>,
    pub percentile_lo: f64,
    pub percentile_hi: f64,
}

/// Nearest-rank percentile of an ascending slice: the value at 1-based
/// rank `ceil(p / 100 * n)`, clamped to `[1, n]`.
pub fn nearest_rank(sorted: &[f32], percentile: f64) -> f32 {
    assert!(!sorted.is_empty(), "percentile of empty slice");
    let n = sorted.len();
    let rank = (percentile / 100.0 * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn compute_normalization(stack: &RasterStack, area_id: &str) -> Result<NormalizationParams> {
    compute_normalization_with(stack, area_id, 2.0, 98.0)
}

pub fn compute_normalization_with(
    stack: &RasterStack,
    area_id: &str,
    percentile_lo: f64,
    percentile_hi: f64,
) -> Result<NormalizationParams> {
    if !(0.0..=100.0).contains(&percentile_lo) || !(0.0..=100.0).contains(&percentile_hi) || percentile_lo >= percentile_hi {
        return Err(Error::InvalidArgument(format!(
            "percentiles must satisfy 0 <= lo < hi <= 100, got {percentile_lo}, {percentile_hi}"
        )));
    }
    let mut p_min = Vec::with_capacity(stack.bands());
    let mut p_max = Vec::with_capacity(stack.bands());
    for b in 0..stack.bands() {
        let mut vals: Vec<f32> = (0..stack.timesteps())
            .flat_map(|t| stack.plane(t, b).iter().copied())
            .filter(|v| !stack.is_nodata(*v))
            .collect();
        if vals.is_empty() {
            return Err(Error::AllNodata { band: b });
        }
        vals.sort_by(f32::total_cmp);
        let lo = nearest_rank(&vals, percentile_lo);
        let hi = nearest_rank(&vals, percentile_hi);
        if lo >= hi {
            return Err(Error::DegenerateBand { band: b });
        }
        p_min.push(lo);
        p_max.push(hi);
    }
    Ok(NormalizationParams {
        area_id: area_id.to_string(),
        p_min,
        p_max,
        percentile_lo,
        percentile_hi,
    })
}

pub fn normalize(stack: &RasterStack, params: &NormalizationParams) -> Result<RasterStack> {
    if params.p_min.len() != stack.bands() || params.p_max.len() != stack.bands() {
        return Err(Error::ShapeMismatch(format!(
            "normalization has {} bands, stack has {}",
            params.p_min.len(),
            stack.bands()
        )));
    }
    let mut out = stack.clone();
    for t in 0..stack.timesteps() {
        for b in 0..stack.bands() {
            let (lo, hi) = (params.p_min[b], params.p_max[b]);
            let span = hi - lo;
            let nodata = stack.nodata;
            for v in out.plane_mut(t, b) {
                if *v == nodata || (v.is_nan() && nodata.is_nan()) {
                    continue;
                }
                *v = ((*v - lo) / span).clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}
