//! Self-supervised density grading: an autoencoder embeds cashew
//! patches, deep embedded clustering groups the embeddings, clusters are
//! labeled high or low density, and every plantation is scored by the
//! share of its patches that fall in high-density clusters.

mod autoencoder;
mod dec;

pub use autoencoder::{Autoencoder, AutoencoderConfig, EncoderEmbedder, PretrainOptions, PretrainReport};
pub use dec::{
    hard_assign, kl_divergence, kmeans, kmeans_init, refine, soft_assign, target_distribution, Embedder,
    FixedEmbeddings, KMeans, Points, RefineOptions, RefineReport,
};

use std::collections::BTreeMap;
use std::path::Path;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{label_components, Connectivity, LabelMask, RasterStack, CLASS_CASHEW, DEFAULT_NODATA, NODATA_CODE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord, Hash)]
#[serde(rename_all = "lowercase")]
pub enum DensityLabel {
    Low,
    High,
}

impl DensityLabel {
    /// Code in the density class raster.
    pub fn code(self) -> u8 {
        match self {
            DensityLabel::Low => crate::raster::DENSITY_LOW,
            DensityLabel::High => crate::raster::DENSITY_HIGH,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            c if c == crate::raster::DENSITY_HIGH => Some(DensityLabel::High),
            c if c == crate::raster::DENSITY_LOW => Some(DensityLabel::Low),
            _ => None,
        }
    }
}

impl std::str::FromStr for DensityLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "high" => Ok(DensityLabel::High),
            "low" => Ok(DensityLabel::Low),
            _ => Err(Error::InvalidArgument(format!("unknown density label {s:?}"))),
        }
    }
}

/// Centroids, kernel degrees of freedom, and the density label of each
/// cluster once assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub dim: usize,
    pub alpha: f64,
    /// `k x dim`.
    pub centroids: Vec<f32>,
    pub labels: Vec<Option<DensityLabel>>,
}

#[derive(Serialize, Deserialize)]
struct ClusterHeader {
    magic: String,
    k: usize,
    alpha: f64,
    d: usize,
    labels: Vec<Option<DensityLabel>>,
}

const CLUSTER_MAGIC: &str = "TCCL1";

impl ClusterModel {
    pub fn new(centroids: Vec<f32>, dim: usize, alpha: f64) -> Result<Self> {
        if dim == 0 || centroids.is_empty() || !centroids.len().is_multiple_of(dim) {
            return Err(Error::ShapeMismatch(format!("{} centroid values for dimension {dim}", centroids.len())));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged("non-finite centroid".into()));
        }
        let k = centroids.len() / dim;
        for a in 0..k {
            for b in a + 1..k {
                if centroids[a * dim..(a + 1) * dim] == centroids[b * dim..(b + 1) * dim] {
                    return Err(Error::InvalidArgument(format!("centroids {a} and {b} coincide")));
                }
            }
        }
        Ok(Self { k, dim, alpha, centroids, labels: vec![None; k] })
    }

    pub fn soft_assign(&self, embeddings: &Points) -> Vec<f64> {
        soft_assign(embeddings, &self.centroids, self.alpha)
    }

    /// Most probable cluster of each embedding.
    pub fn assign(&self, embeddings: &Points) -> Vec<usize> {
        hard_assign(&self.soft_assign(embeddings), self.k)
    }

    pub fn label(&self, cluster: usize) -> Result<DensityLabel> {
        self.labels
            .get(cluster)
            .copied()
            .flatten()
            .ok_or(Error::UnlabeledCluster { cluster })
    }

    /// JSON header line, then centroids as `f32` little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let h = ClusterHeader { magic: CLUSTER_MAGIC.into(), k: self.k, alpha: self.alpha, d: self.dim, labels: self.labels.clone() };
        let mut out = serde_json::to_vec(&h).expect("header serializes");
        out.push(b'\n');
        for v in &self.centroids {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::format(path, "missing header line"))?;
        let h: ClusterHeader =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::format(path, format!("bad header: {e}")))?;
        if h.magic != CLUSTER_MAGIC {
            return Err(Error::format(path, format!("bad magic {:?}", h.magic)));
        }
        let body = &bytes[nl + 1..];
        if body.len() != 4 * h.k * h.d || h.labels.len() != h.k {
            return Err(Error::format(path, "centroid data does not match header"));
        }
        let centroids = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let mut m = Self::new(centroids, h.d, h.alpha).map_err(|e| Error::format(path, e.to_string()))?;
        m.labels = h.labels;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// Where cluster density labels come from.
pub enum LabelSource<'a> {
    /// Cluster index to label, e.g. from visual inspection.
    Explicit(&'a BTreeMap<usize, DensityLabel>),
    /// Majority vote of per-patch truth among each cluster's members.
    /// Ties go to low density.
    TruthMajority { assignments: &'a [usize], truth: &'a [DensityLabel] },
}

pub fn label_clusters(model: &ClusterModel, source: LabelSource) -> Result<ClusterModel> {
    let mut out = model.clone();
    match source {
        LabelSource::Explicit(map) => {
            if let Some(&bad) = map.keys().find(|&&c| c >= model.k) {
                return Err(Error::InvalidArgument(format!("label for cluster {bad} of {}", model.k)));
            }
            for c in 0..model.k {
                out.labels[c] = Some(*map.get(&c).ok_or(Error::UnlabeledCluster { cluster: c })?);
            }
        }
        LabelSource::TruthMajority { assignments, truth } => {
            if assignments.len() != truth.len() {
                return Err(Error::ShapeMismatch("assignments and truth differ in length".into()));
            }
            let mut votes = vec![(0usize, 0usize); model.k];
            for (&a, &t) in assignments.iter().zip(truth) {
                if a >= model.k {
                    return Err(Error::InvalidArgument(format!("assignment to cluster {a} of {}", model.k)));
                }
                match t {
                    DensityLabel::High => votes[a].0 += 1,
                    DensityLabel::Low => votes[a].1 += 1,
                }
            }
            for (c, &(high, low)) in votes.iter().enumerate() {
                if high + low == 0 {
                    return Err(Error::UnlabeledCluster { cluster: c });
                }
                out.labels[c] = Some(if high > low { DensityLabel::High } else { DensityLabel::Low });
            }
        }
    }
    Ok(out)
}

/// Cluster of each cell of a square patch grid laid over a map; `None`
/// where no patch was embedded.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub size: usize,
    pub rows: usize,
    pub cols: usize,
    pub clusters: Vec<Option<usize>>,
}

impl PatchGrid {
    pub fn for_extent(height: usize, width: usize, size: usize) -> Self {
        let rows = height.div_ceil(size);
        let cols = width.div_ceil(size);
        Self { size, rows, cols, clusters: vec![None; rows * cols] }
    }

    pub fn cell_of(&self, row: usize, col: usize) -> usize {
        (row / self.size) * self.cols + col / self.size
    }
}

/// What to do with a plantation none of whose cells meets the coverage
/// rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UncountedPolicy {
    #[default]
    Error,
    /// Leave the plantation unscored (nodata in the output rasters).
    Drop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentScore {
    pub pixels: usize,
    pub n_high: u64,
    pub n_all: u64,
    pub score: Ratio<u64>,
    pub label: DensityLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityScoreMap {
    pub height: usize,
    pub width: usize,
    pub components: Vec<ComponentScore>,
    /// Component index per pixel (`None` outside scored plantations).
    pub component_of: Vec<Option<usize>>,
    pub dropped_components: usize,
}

/// A cell counts toward a plantation when at least this share of the
/// cell's in-bounds pixels belongs to it.
pub const CELL_COVERAGE: Ratio<u64> = Ratio::new_raw(1, 4);

impl DensityScoreMap {
    pub fn score_plane(&self) -> Vec<f32> {
        self.component_of
            .iter()
            .map(|c| c.map_or(DEFAULT_NODATA, |i| {
                let s = self.components[i].score;
                (*s.numer() as f64 / *s.denom() as f64) as f32
            }))
            .collect()
    }

    pub fn class_plane(&self) -> Vec<u8> {
        self.component_of
            .iter()
            .map(|c| c.map_or(NODATA_CODE, |i| self.components[i].label.code()))
            .collect()
    }

    pub fn score_stack(&self) -> Result<RasterStack> {
        let mut s = RasterStack::new(1, 1, self.height, self.width, self.score_plane(), DEFAULT_NODATA)?;
        s.band_names = vec!["density_score".into()];
        Ok(s)
    }

    pub fn class_mask(&self) -> Result<LabelMask> {
        LabelMask::new(self.height, self.width, self.class_plane())
    }
}

/// Scores every 8-connected cashew plantation: the share of its counted
/// grid cells whose cluster is labeled high density. Scores of 0.5 and
/// above are high density.
pub fn density_score(
    cashew: &LabelMask,
    grid: &PatchGrid,
    model: &ClusterModel,
    policy: UncountedPolicy,
) -> Result<DensityScoreMap> {
    let (h, w) = (cashew.height(), cashew.width());
    if grid.rows != h.div_ceil(grid.size) || grid.cols != w.div_ceil(grid.size) {
        return Err(Error::ShapeMismatch("patch grid does not cover the map".into()));
    }
    let codes = cashew.codes();
    let (_, comps) = label_components(h, w, Connectivity::Eight, |i| (codes[i] == CLASS_CASHEW).then_some(()));
    let mut component_of = vec![None; h * w];
    let mut components = Vec::new();
    let mut dropped = 0;
    let half = Ratio::new(1u64, 2);
    for comp in &comps {
        let mut per_cell: BTreeMap<usize, u64> = BTreeMap::new();
        for &p in &comp.pixels {
            *per_cell.entry(grid.cell_of(p / w, p % w)).or_default() += 1;
        }
        let mut n_all = 0u64;
        let mut n_high = 0u64;
        for (&cell, &count) in &per_cell {
            let (cr, cc) = (cell / grid.cols, cell % grid.cols);
            let cell_h = (h - cr * grid.size).min(grid.size) as u64;
            let cell_w = (w - cc * grid.size).min(grid.size) as u64;
            if Ratio::new(count, cell_h * cell_w) < CELL_COVERAGE {
                continue;
            }
            let cluster = grid.clusters[cell].ok_or_else(|| {
                Error::InsufficientData(format!("grid cell ({cr}, {cc}) covers a plantation but has no cluster"))
            })?;
            n_all += 1;
            if model.label(cluster)? == DensityLabel::High {
                n_high += 1;
            }
        }
        if n_all == 0 {
            match policy {
                UncountedPolicy::Error => {
                    return Err(Error::InsufficientData(format!(
                        "plantation of {} pixels has no grid cell with at least 25% coverage",
                        comp.pixels.len()
                    )))
                }
                UncountedPolicy::Drop => {
                    dropped += 1;
                    continue;
                }
            }
        }
        let score = Ratio::new(n_high, n_all);
        let label = if score >= half { DensityLabel::High } else { DensityLabel::Low };
        let idx = components.len();
        for &p in &comp.pixels {
            component_of[p] = Some(idx);
        }
        components.push(ComponentScore { pixels: comp.pixels.len(), n_high, n_all, score, label });
    }
    Ok(DensityScoreMap { height: h, width: w, components, component_of, dropped_components: dropped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model_with(labels: &[DensityLabel]) -> ClusterModel {
        let k = labels.len();
        let mut m = ClusterModel::new((0..k).map(|i| i as f32).collect(), 1, 1.0).unwrap();
        m.labels = labels.iter().map(|&l| Some(l)).collect();
        m
    }

    /// One plantation filling a 1 x n row of cells, each cell `size` wide.
    fn row_case(cells: &[usize], labels: &[DensityLabel]) -> DensityScoreMap {
        let size = 4;
        let w = size * cells.len();
        let mask = LabelMask::filled(size, w, CLASS_CASHEW).unwrap();
        let mut grid = PatchGrid::for_extent(size, w, size);
        for (i, &c) in cells.iter().enumerate() {
            grid.clusters[i] = Some(c);
        }
        density_score(&mask, &grid, &model_with(labels), UncountedPolicy::Error).unwrap()
    }

    use DensityLabel::{High, Low};

    #[test]
    fn all_high_scores_one() {
        let s = row_case(&[0, 0, 0], &[High, Low]);
        assert_eq!(s.components[0].score, Ratio::new(1, 1));
        assert_eq!(s.components[0].label, High);
    }

    #[test]
    fn two_of_five_is_low() {
        let s = row_case(&[0, 1, 1, 0, 1], &[High, Low]);
        assert_eq!(s.components[0].score, Ratio::new(2, 5));
        assert_eq!(s.components[0].label, Low);
        assert_eq!(s.components[0].score * 5, Ratio::from_integer(2));
    }

    #[test]
    fn half_is_high() {
        let s = row_case(&[0, 1], &[High, Low]);
        assert_eq!(s.components[0].score, Ratio::new(1, 2));
        assert_eq!(s.components[0].label, High);
    }

    #[test]
    fn sliver_cells_do_not_count() {
        // 8x8 map, 4-pixel cells. The plantation fills the left column of
        // cells and pokes 1 pixel into the top-right cell (1/16 < 1/4).
        let mut codes = vec![0u8; 64];
        for r in 0..8 {
            for c in 0..4 {
                codes[r * 8 + c] = CLASS_CASHEW;
            }
        }
        codes[4] = CLASS_CASHEW;
        let mask = LabelMask::new(8, 8, codes).unwrap();
        let mut grid = PatchGrid::for_extent(8, 8, 4);
        grid.clusters = vec![Some(0), Some(1), Some(0), None];
        let s = density_score(&mask, &grid, &model_with(&[High, Low]), UncountedPolicy::Error).unwrap();
        assert_eq!((s.components[0].n_high, s.components[0].n_all), (2, 2));
    }

    #[test]
    fn uncounted_plantation_policy() {
        let mut codes = vec![0u8; 64];
        codes[0] = CLASS_CASHEW;
        let mask = LabelMask::new(8, 8, codes).unwrap();
        let mut grid = PatchGrid::for_extent(8, 8, 4);
        grid.clusters = vec![Some(0); 4];
        let m = model_with(&[High]);
        assert!(density_score(&mask, &grid, &m, UncountedPolicy::Error).is_err());
        let s = density_score(&mask, &grid, &m, UncountedPolicy::Drop).unwrap();
        assert_eq!(s.dropped_components, 1);
        assert!(s.class_plane().iter().all(|&c| c == NODATA_CODE));
    }

    #[test]
    fn explicit_labels_stored_verbatim() {
        let m = ClusterModel::new((0..10).map(|i| i as f32).collect(), 1, 1.0).unwrap();
        let map: BTreeMap<usize, DensityLabel> = (0..10).map(|c| (c, if c < 5 { High } else { Low })).collect();
        let out = label_clusters(&m, LabelSource::Explicit(&map)).unwrap();
        for c in 0..10 {
            assert_eq!(out.labels[c], Some(map[&c]));
        }
        let partial: BTreeMap<usize, DensityLabel> = (0..9).map(|c| (c, High)).collect();
        assert!(matches!(label_clusters(&m, LabelSource::Explicit(&partial)), Err(Error::UnlabeledCluster { cluster: 9 })));
    }

    #[test]
    fn majority_labels() {
        let m = ClusterModel::new(vec![0.0, 1.0, 2.0], 1, 1.0).unwrap();
        // Cluster 0 pure high, cluster 1 60/40 low, cluster 2 tied.
        let assignments = [0, 0, 1, 1, 1, 1, 1, 2, 2];
        let truth = [High, High, Low, Low, Low, High, High, High, Low];
        let out = label_clusters(&m, LabelSource::TruthMajority { assignments: &assignments, truth: &truth }).unwrap();
        assert_eq!(out.labels, vec![Some(High), Some(Low), Some(Low)]);
    }

    #[test]
    fn cluster_file_round_trip() {
        let mut m = ClusterModel::new(vec![0.5, -1.0, 2.0, 3.25], 2, 1.0).unwrap();
        m.labels = vec![Some(High), Some(Low)];
        let back = ClusterModel::from_bytes(&m.to_bytes(), Path::new("mem")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn coincident_centroids_rejected() {
        assert!(ClusterModel::new(vec![1.0, 1.0], 1, 1.0).is_err());
    }
}
