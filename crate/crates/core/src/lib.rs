//! Smallholder tree-crop mapping on raster time series.
//!
//! The crate covers the full chain from image stacks to area estimates:
//!
//! * [`raster`]: the `RSTK` container, per-area percentile normalization,
//!   label hygiene, patch tiling and a synthetic scene generator.
//! * [`nnprims`]: a small reverse-mode tape with the convolution, pooling,
//!   recurrent, attention, dropout and loss kernels the models need.
//! * [`stca`]: the spatiotemporal segmentation network with Monte Carlo
//!   dropout inference.
//! * [`postprocess`]: region growing, class-map assembly and masking.
//! * [`castc`]: autoencoder embeddings refined by deep embedded clustering
//!   and the per-plantation density score.
//! * [`evaluation`]: sampling design, accuracy metrics, stratified area
//!   estimates and cluster-quality metrics.

pub mod castc;
pub mod error;
pub mod evaluation;
pub mod nnprims;
pub mod postprocess;
pub mod raster;
pub mod rng;
pub mod stca;

pub use error::{Error, Result};
