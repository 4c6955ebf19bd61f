//! Two-phase sampling: a simple random sample of square clusters defines
//! the frame, then a stratified random sample of pixels is drawn inside it.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{LabelMask, CLASS_CASHEW, CLASS_CROPLAND, CLASS_MIXED};
use crate::rng;

/// Stable classes and transitions between the first and last map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    StableMixed,
    StableCashew,
    StableCropland,
    MixedToCashew,
    CroplandToCashew,
    MixedToCropland,
    CroplandToMixed,
}

pub const NUM_STRATA: usize = 7;

impl Stratum {
    pub const ALL: [Stratum; NUM_STRATA] = [
        Stratum::StableMixed,
        Stratum::StableCashew,
        Stratum::StableCropland,
        Stratum::MixedToCashew,
        Stratum::CroplandToCashew,
        Stratum::MixedToCropland,
        Stratum::CroplandToMixed,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Stratum::StableMixed => "stable_mixed",
            Stratum::StableCashew => "stable_cashew",
            Stratum::StableCropland => "stable_cropland",
            Stratum::MixedToCashew => "mixed_to_cashew",
            Stratum::CroplandToCashew => "cropland_to_cashew",
            Stratum::MixedToCropland => "mixed_to_cropland",
            Stratum::CroplandToMixed => "cropland_to_mixed",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.name() == s)
    }

    /// Stratum of a pixel from its first and last class. Built-up,
    /// nodata and other transitions belong to no stratum.
    pub fn of(first: u8, last: u8) -> Option<Self> {
        match (first, last) {
            (CLASS_MIXED, CLASS_MIXED) => Some(Stratum::StableMixed),
            (CLASS_CASHEW, CLASS_CASHEW) => Some(Stratum::StableCashew),
            (CLASS_CROPLAND, CLASS_CROPLAND) => Some(Stratum::StableCropland),
            (CLASS_MIXED, CLASS_CASHEW) => Some(Stratum::MixedToCashew),
            (CLASS_CROPLAND, CLASS_CASHEW) => Some(Stratum::CroplandToCashew),
            (CLASS_MIXED, CLASS_CROPLAND) => Some(Stratum::MixedToCropland),
            (CLASS_CROPLAND, CLASS_MIXED) => Some(Stratum::CroplandToMixed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignParams {
    /// Side of a square sampling cluster, in pixels.
    pub cluster_size: usize,
    /// Clusters drawn; all clusters when this exceeds their number.
    pub n_clusters: usize,
    /// Pixels drawn per stratum, in [`Stratum::ALL`] order.
    pub allocation: [usize; NUM_STRATA],
}

impl Default for DesignParams {
    fn default() -> Self {
        Self { cluster_size: 50, n_clusters: 120, allocation: [300, 200, 400, 100, 100, 100, 200] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub point_id: usize,
    pub row: usize,
    pub col: usize,
    pub stratum: Stratum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedDesign {
    pub params: DesignParams,
    pub seed: u64,
    /// Indices of the selected clusters in row-major cluster order.
    pub clusters: Vec<usize>,
    /// Frame pixels per stratum.
    pub stratum_pixels: [u64; NUM_STRATA],
}

/// Stratum of every pixel from the first and last map.
pub fn strata_map(maps: &[LabelMask]) -> Result<Vec<Option<Stratum>>> {
    if maps.len() < 2 {
        return Err(Error::InvalidArgument("change strata need maps for at least two epochs".into()));
    }
    let (first, last) = (&maps[0], &maps[maps.len() - 1]);
    if maps.iter().any(|m| !m.same_extent(first)) {
        return Err(Error::ShapeMismatch("maps differ in extent".into()));
    }
    Ok(first.codes().iter().zip(last.codes()).map(|(&a, &b)| Stratum::of(a, b)).collect())
}

/// Draws clusters uniformly without replacement, then the allocated
/// number of pixels per stratum uniformly without replacement from the
/// frame they form. Pixels outside the seven strata are outside the frame.
pub fn draw_design(maps: &[LabelMask], params: &DesignParams, seed: u64) -> Result<(StratifiedDesign, Vec<SamplePoint>)> {
    if params.cluster_size == 0 || params.n_clusters == 0 {
        return Err(Error::InvalidArgument("cluster size and count must be positive".into()));
    }
    if params.allocation.contains(&0) {
        return Err(Error::InvalidArgument("every stratum needs a positive allocation".into()));
    }
    let strata = strata_map(maps)?;
    let (h, w) = (maps[0].height(), maps[0].width());
    let cs = params.cluster_size;
    let (crow, ccol) = (h.div_ceil(cs), w.div_ceil(cs));
    let total = crow * ccol;
    let mut clusters: Vec<usize> = if params.n_clusters >= total {
        (0..total).collect()
    } else {
        index::sample(&mut rng::rng_for(seed, "design/clusters"), total, params.n_clusters).into_vec()
    };
    clusters.sort_unstable();
    let mut frame: Vec<Vec<usize>> = vec![Vec::new(); NUM_STRATA];
    for &c in &clusters {
        let (r0, c0) = ((c / ccol) * cs, (c % ccol) * cs);
        for r in r0..(r0 + cs).min(h) {
            for col in c0..(c0 + cs).min(w) {
                if let Some(s) = strata[r * w + col] {
                    frame[s.index()].push(r * w + col);
                }
            }
        }
    }
    let mut points = Vec::new();
    let mut stratum_pixels = [0u64; NUM_STRATA];
    for s in Stratum::ALL {
        let pop = &frame[s.index()];
        stratum_pixels[s.index()] = pop.len() as u64;
        let n = params.allocation[s.index()];
        if pop.len() < n {
            return Err(Error::InsufficientData(format!(
                "stratum {} has {} pixels in the frame, fewer than its allocation {n}",
                s.name(),
                pop.len()
            )));
        }
        let mut r = rng::rng(rng::indexed(seed, "design/pixels", s.index() as u64));
        let mut picked = index::sample(&mut r, pop.len(), n).into_vec();
        picked.sort_unstable();
        for i in picked {
            let p = pop[i];
            points.push(SamplePoint { point_id: points.len(), row: p / w, col: p % w, stratum: s });
        }
    }
    Ok((StratifiedDesign { params: params.clone(), seed, clusters, stratum_pixels }, points))
}
