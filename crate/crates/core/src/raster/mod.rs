//! Raster containers, normalization, label hygiene, tiling and the
//! synthetic scene generator.

mod components;
mod io;
mod labels;
mod normalize;
mod synth;
mod tiling;

pub use components::{label_components, Component, Connectivity};
pub use io::{read_label_mask, read_rstk, read_stack, write_label_mask, write_stack, Rstk, RstkHeader};
pub use labels::{erode_labels, ErodeParams};
pub use normalize::{compute_normalization, compute_normalization_with, nearest_rank, normalize, NormalizationParams};
pub use synth::{synth_scene, synth_series, SceneConfig, SyntheticScene, DENSITY_HIGH, DENSITY_LOW};
pub use tiling::{extract_labels, extract_patch, tile_origins, tile_patches, PatchSet};

use crate::error::{Error, Result};

/// Mixed trees / grassland.
pub const CLASS_MIXED: u8 = 0;
/// Tree-crop (cashew) plantation.
pub const CLASS_CASHEW: u8 = 1;
/// Built-up land.
pub const CLASS_BUILTUP: u8 = 2;
/// Cropland and everything else.
pub const CLASS_CROPLAND: u8 = 3;
pub const NODATA_CODE: u8 = 255;
pub const NUM_CLASSES: usize = 4;
/// Nodata sentinel for float rasters written by the pipeline.
pub const DEFAULT_NODATA: f32 = -9999.0;

pub fn is_valid_code(code: u8) -> bool {
    code < NUM_CLASSES as u8 || code == NODATA_CODE
}

/// Six-term affine geotransform (origin x, pixel width, row rotation,
/// origin y, column rotation, pixel height).
pub type GeoTransform = [f64; 6];

/// A `T x B x H x W` stack of band values, stored time-major, then band,
/// then row-major pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterStack {
    timesteps: usize,
    bands: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
    pub nodata: f32,
    pub transform: Option<GeoTransform>,
    pub band_names: Vec<String>,
    pub timestep_labels: Vec<String>,
}

impl RasterStack {
    pub fn new(
        timesteps: usize,
        bands: usize,
        height: usize,
        width: usize,
        values: Vec<f32>,
        nodata: f32,
    ) -> Result<Self> {
        if timesteps == 0 || bands == 0 || height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!(
                "raster extents must be positive, got T={timesteps} B={bands} H={height} W={width}"
            )));
        }
        let expected = timesteps * bands * height * width;
        if values.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "value array has {} entries, expected {expected}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() && !same_nodata(**v, nodata)) {
            return Err(Error::InvalidArgument(format!("non-finite raster value {bad}")));
        }
        Ok(Self {
            timesteps,
            bands,
            height,
            width,
            values,
            nodata,
            transform: None,
            band_names: Vec::new(),
            timestep_labels: Vec::new(),
        })
    }

    pub fn filled(timesteps: usize, bands: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(
            timesteps,
            bands,
            height,
            width,
            vec![value; timesteps * bands * height * width],
            DEFAULT_NODATA,
        )
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }
    pub fn bands(&self) -> usize {
        self.bands
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn values(&self) -> &[f32] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    fn plane_offset(&self, t: usize, b: usize) -> usize {
        (t * self.bands + b) * self.plane_len()
    }

    pub fn plane(&self, t: usize, b: usize) -> &[f32] {
        let o = self.plane_offset(t, b);
        &self.values[o..o + self.plane_len()]
    }

    pub fn plane_mut(&mut self, t: usize, b: usize) -> &mut [f32] {
        let o = self.plane_offset(t, b);
        let n = self.plane_len();
        &mut self.values[o..o + n]
    }

    pub fn get(&self, t: usize, b: usize, row: usize, col: usize) -> f32 {
        self.values[self.plane_offset(t, b) + row * self.width + col]
    }

    pub fn is_nodata(&self, v: f32) -> bool {
        same_nodata(v, self.nodata)
    }

    /// Copy of the metadata with a new value array of the same shape.
    pub fn with_values(&self, values: Vec<f32>) -> Result<Self> {
        let mut out = Self::new(self.timesteps, self.bands, self.height, self.width, values, self.nodata)?;
        out.transform = self.transform;
        out.band_names = self.band_names.clone();
        out.timestep_labels = self.timestep_labels.clone();
        Ok(out)
    }

    /// Keeps only the listed timesteps, in the given order.
    pub fn select_timesteps(&self, steps: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(steps.len() * self.bands * self.plane_len());
        for &t in steps {
            if t >= self.timesteps {
                return Err(Error::InvalidArgument(format!("timestep {t} out of range")));
            }
            let o = self.plane_offset(t, 0);
            values.extend_from_slice(&self.values[o..o + self.bands * self.plane_len()]);
        }
        let mut out = Self::new(steps.len(), self.bands, self.height, self.width, values, self.nodata)?;
        out.transform = self.transform;
        out.band_names = self.band_names.clone();
        out.timestep_labels = steps
            .iter()
            .filter_map(|&t| self.timestep_labels.get(t).cloned())
            .collect();
        Ok(out)
    }
}

fn same_nodata(v: f32, nodata: f32) -> bool {
    v == nodata || (v.is_nan() && nodata.is_nan())
}

/// Per-pixel categorical raster with codes `{0, 1, 2, 3, 255}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    height: usize,
    width: usize,
    codes: Vec<u8>,
    pub transform: Option<GeoTransform>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, codes: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::ShapeMismatch("label mask extents must be positive".into()));
        }
        if codes.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "label mask has {} codes, expected {}",
                codes.len(),
                height * width
            )));
        }
        if let Some(bad) = codes.iter().find(|c| !is_valid_code(**c)) {
            return Err(Error::InvalidArgument(format!("invalid class code {bad}")));
        }
        Ok(Self {
            height,
            width,
            codes,
            transform: None,
        })
    }

    pub fn filled(height: usize, width: usize, code: u8) -> Result<Self> {
        Self::new(height, width, vec![code; height * width])
    }

    /// Binary mask: `true` becomes `on`, `false` becomes `off`.
    pub fn from_bools(height: usize, width: usize, bits: &[bool], on: u8, off: u8) -> Result<Self> {
        Self::new(height, width, bits.iter().map(|&b| if b { on } else { off }).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn codes(&self) -> &[u8] {
        &self.codes
    }
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.codes[row * self.width + col]
    }

    pub fn same_extent(&self, other: &LabelMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Replaces codes in place; every new code must be valid.
    pub fn map_codes(&mut self, mut f: impl FnMut(usize, u8) -> u8) -> Result<()> {
        for (i, c) in self.codes.iter_mut().enumerate() {
            let n = f(i, *c);
            if !is_valid_code(n) {
                return Err(Error::InvalidArgument(format!("invalid class code {n}")));
            }
            *c = n;
        }
        Ok(())
    }

    pub fn count(&self, code: u8) -> usize {
        self.codes.iter().filter(|&&c| c == code).count()
    }
}
