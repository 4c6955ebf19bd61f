//! From probability fields to class maps: seeded region growing, class
//! assembly, multi-year persistence, external masks and uncertainty
//! filtering. Every step that changes a map appends to its provenance.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Connectivity, LabelMask, CLASS_BUILTUP, CLASS_CASHEW, CLASS_CROPLAND, NODATA_CODE};
use crate::stca::ProbabilityField;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowThresholds {
    /// Pixels with `p >= seed_threshold` start regions.
    pub seed_threshold: f32,
    /// Pixels with `p >= neighbor_low` may join a region.
    pub neighbor_low: f32,
    pub connectivity: Connectivity,
}

impl Default for GrowThresholds {
    fn default() -> Self {
        Self { seed_threshold: 0.8, neighbor_low: 0.4, connectivity: Connectivity::Eight }
    }
}

impl GrowThresholds {
    pub fn validate(&self) -> Result<()> {
        let (s, n) = (self.seed_threshold, self.neighbor_low);
        if (0.0..s).contains(&n) && s <= 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidThresholds(format!(
                "need 0 <= neighbor_low < seed_threshold <= 1, got neighbor_low {n}, seed_threshold {s}"
            )))
        }
    }
}

/// Pixels reachable from a seed through pixels at or above
/// `neighbor_low`. Isolated mid-confidence blobs are dropped.
pub fn region_grow(prob: &[f32], height: usize, width: usize, t: &GrowThresholds) -> Result<Vec<bool>> {
    t.validate()?;
    if prob.len() != height * width {
        return Err(Error::ShapeMismatch(format!("{} values for {height}x{width}", prob.len())));
    }
    let mut grown = vec![false; prob.len()];
    let mut queue: VecDeque<usize> = VecDeque::new();
    for (i, &p) in prob.iter().enumerate() {
        if p >= t.seed_threshold {
            grown[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (r, c) = ((i / width) as isize, (i % width) as isize);
        for &(dr, dc) in t.connectivity.offsets() {
            let (nr, nc) = (r + dr, c + dc);
            if nr < 0 || nc < 0 || nr >= height as isize || nc >= width as isize {
                continue;
            }
            let j = nr as usize * width + nc as usize;
            if !grown[j] && prob[j] >= t.neighbor_low {
                grown[j] = true;
                queue.push_back(j);
            }
        }
    }
    Ok(grown)
}

/// One applied operation in a map's history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceStep {
    pub operation: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

/// Class codes plus the ordered list of operations that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMap {
    pub mask: LabelMask,
    provenance: Vec<ProvenanceStep>,
}

impl ClassMap {
    pub fn new(mask: LabelMask) -> Self {
        Self { mask, provenance: Vec::new() }
    }

    pub fn with_provenance(mask: LabelMask, provenance: Vec<ProvenanceStep>) -> Self {
        Self { mask, provenance }
    }

    pub fn provenance(&self) -> &[ProvenanceStep] {
        &self.provenance
    }

    /// History is append-only.
    pub fn record(&mut self, operation: &str, params: serde_json::Value) {
        self.provenance.push(ProvenanceStep { operation: operation.to_string(), params });
    }

    pub fn sidecar_json(&self) -> String {
        serde_json::to_string_pretty(&serde_json::json!({ "operations": self.provenance }))
            .expect("provenance serializes")
    }

    pub fn write_sidecar(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.sidecar_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read_sidecar(path: &Path) -> Result<Vec<ProvenanceStep>> {
        #[derive(Deserialize)]
        struct Sidecar {
            operations: Vec<ProvenanceStep>,
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Sidecar = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        Ok(s.operations)
    }
}

/// Grows every class and gives each covered pixel the covering class with
/// the highest mean probability (lowest code on ties). Pixels no class
/// reaches become cropland/other.
pub fn assemble_classmap(field: &ProbabilityField, t: &GrowThresholds) -> Result<ClassMap> {
    t.validate()?;
    let (h, w) = (field.height, field.width);
    let grown: Vec<Vec<bool>> = (0..field.classes)
        .map(|k| region_grow(field.prob_plane(k), h, w, t))
        .collect::<Result<_>>()?;
    let codes = (0..h * w)
        .map(|i| {
            let mut best: Option<usize> = None;
            for (k, g) in grown.iter().enumerate() {
                if g[i] && best.is_none_or(|b| field.prob_plane(k)[i] > field.prob_plane(b)[i]) {
                    best = Some(k);
                }
            }
            best.map_or(CLASS_CROPLAND, |k| k as u8)
        })
        .collect();
    let mut map = ClassMap::new(LabelMask::new(h, w, codes)?);
    map.record(
        "assemble_classmap",
        serde_json::json!({
            "seed_threshold": t.seed_threshold,
            "neighbor_low": t.neighbor_low,
            "connectivity": t.connectivity,
            "model_id": field.model_id,
            "runs": field.runs,
            "seed": field.seed,
        }),
    );
    Ok(map)
}

/// Once a pixel is cashew in some year it stays cashew in every later
/// year. Maps are ordered by ascending year.
pub fn temporal_persistence(maps: &[ClassMap]) -> Result<Vec<ClassMap>> {
    if maps.len() < 2 {
        return Err(Error::InvalidArgument("temporal persistence needs at least two years".into()));
    }
    if maps.iter().any(|m| !m.mask.same_extent(&maps[0].mask)) {
        return Err(Error::ShapeMismatch("yearly maps differ in extent".into()));
    }
    let mut seen = vec![false; maps[0].mask.codes().len()];
    let mut out = Vec::with_capacity(maps.len());
    for (year, m) in maps.iter().enumerate() {
        let mut next = m.clone();
        next.mask.map_codes(|i, c| {
            seen[i] |= c == CLASS_CASHEW;
            if seen[i] {
                CLASS_CASHEW
            } else {
                c
            }
        })?;
        next.record("temporal_persistence", serde_json::json!({ "year_index": year }));
        out.push(next);
    }
    Ok(out)
}

/// Overwrites pixels flagged in `builtup` (any code other than 0 and
/// nodata) with the built-up class.
pub fn apply_external_mask(map: &ClassMap, builtup: &LabelMask) -> Result<ClassMap> {
    if !map.mask.same_extent(builtup) {
        return Err(Error::ShapeMismatch("built-up mask and class map differ in extent".into()));
    }
    let flags = builtup.codes();
    let mut out = map.clone();
    out.mask
        .map_codes(|i, c| if flags[i] != 0 && flags[i] != NODATA_CODE { CLASS_BUILTUP } else { c })?;
    out.record("apply_external_mask", serde_json::json!({ "masked_pixels": flags.iter().filter(|&&f| f != 0 && f != NODATA_CODE).count() }));
    Ok(out)
}

/// Sets pixels whose uncertainty exceeds `threshold` to nodata.
pub fn uncertainty_filter(map: &ClassMap, unc: &[f32], threshold: f32) -> Result<ClassMap> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::InvalidArgument(format!("uncertainty threshold {threshold} must be non-negative")));
    }
    if unc.len() != map.mask.codes().len() {
        return Err(Error::ShapeMismatch("uncertainty plane and class map differ in extent".into()));
    }
    let mut out = map.clone();
    out.mask.map_codes(|i, c| if unc[i] > threshold { NODATA_CODE } else { c })?;
    // JSON has no infinity; record it as null.
    let t = if threshold.is_finite() { serde_json::json!(threshold) } else { serde_json::Value::Null };
    out.record("uncertainty_filter", serde_json::json!({ "threshold": t }));
    Ok(out)
}
