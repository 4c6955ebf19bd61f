//! Sampling design, accuracy and area estimation, cluster quality and
//! temporal consistency.

mod clusters;
mod design;
mod estimates;

pub use clusters::{
    coefficient_of_variation, pairwise_separability, separability_index, split_clusters, temporal_consistency,
};
pub use design::{draw_design, strata_map, DesignParams, SamplePoint, StratifiedDesign, Stratum, NUM_STRATA};
pub use estimates::{
    confusion, exact_areas, f1_score, f1_scores, stratified_estimates, AreaEstimate, ClassArea, ConfusionMatrix, Estimate, Z95,
};
