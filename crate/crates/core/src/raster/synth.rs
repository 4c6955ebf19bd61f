//! Deterministic synthetic scenes standing in for satellite time series.
//!
//! A scene is a Voronoi partition of fields. Each field gets a land-cover
//! class chosen to track the requested mixture, and each class gets its own
//! temporal signature over the dry season:
//!
//! * cropland swings strongly between green and bare soil,
//! * mixed trees/grassland swings mildly,
//! * built-up land is bright and static,
//! * plantations are stable canopy crowns on a row grid over a darker
//!   understory; the row spacing sets the planting density.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{
    LabelMask, RasterStack, CLASS_BUILTUP, CLASS_CASHEW, CLASS_CROPLAND, CLASS_MIXED, NODATA_CODE,
    NUM_CLASSES,
};
use crate::error::{Error, Result};
use crate::rng;

/// Density truth code for low-density plantation pixels.
pub const DENSITY_LOW: u8 = 0;
/// Density truth code for high-density plantation pixels.
pub const DENSITY_HIGH: u8 = 1;

const MONTHS: [&str; 7] = ["Nov", "Dec", "Jan", "Feb", "Mar", "Apr", "May"];
const BANDS: [&str; 4] = ["blue", "green", "red", "nir"];

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub timesteps: usize,
    /// Area shares of mixed, cashew, built-up, cropland; must sum to 1.
    pub mixture: [f64; 4],
    /// Typical field side length in pixels.
    pub field_size: f64,
    pub crown_in_row_spacing: f64,
    pub crown_row_spacing_high: f64,
    pub crown_row_spacing_low: f64,
    pub crown_radius: f64,
    /// Share of plantation area planted at high density.
    pub high_density_fraction: f64,
    /// Standard deviation of per-pixel reflectance noise.
    pub noise: f32,
    /// Yearly probability that a mixed or cropland field becomes plantation.
    pub expansion_rate: f64,
    /// Yearly probability that a mixed field turns to cropland or back.
    pub swap_rate: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 256,
            width: 256,
            bands: 4,
            timesteps: 7,
            mixture: [0.25, 0.35, 0.10, 0.30],
            field_size: 24.0,
            crown_in_row_spacing: 4.0,
            crown_row_spacing_high: 4.0,
            crown_row_spacing_low: 8.0,
            crown_radius: 1.3,
            high_density_fraction: 0.5,
            noise: 0.015,
            expansion_rate: 0.12,
            swap_rate: 0.08,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bands != 4 {
            return Err(Error::InvalidArgument(format!("synthetic scenes have 4 bands, got {}", self.bands)));
        }
        if self.height == 0 || self.width == 0 || self.timesteps == 0 {
            return Err(Error::InvalidArgument("scene extents must be positive".into()));
        }
        let sum: f64 = self.mixture.iter().sum();
        if self.mixture.iter().any(|w| !w.is_finite() || *w < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "invalid mixture weights {:?}: need non-negative shares summing to 1",
                self.mixture
            )));
        }
        let positive = [
            self.field_size,
            self.crown_in_row_spacing,
            self.crown_row_spacing_high,
            self.crown_row_spacing_low,
            self.crown_radius,
        ];
        if positive.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidArgument("field and crown geometry must be positive".into()));
        }
        let probs = [self.high_density_fraction, self.expansion_rate, self.swap_rate];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || self.expansion_rate + self.swap_rate > 1.0 {
            return Err(Error::InvalidArgument("fractions and rates must lie in [0, 1]".into()));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::InvalidArgument("noise must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub stack: RasterStack,
    pub labels: LabelMask,
    /// `DENSITY_HIGH` / `DENSITY_LOW` inside plantations, nodata elsewhere.
    pub density_truth: LabelMask,
    /// Crown centres as (row, col).
    pub crowns: Vec<(f32, f32)>,
}

struct Layout {
    cell_of: Vec<u32>,
    n_cells: usize,
    cell_area: Vec<usize>,
}

fn voronoi(cfg: &SceneConfig, rng: &mut rng::Rng) -> Layout {
    let (h, w) = (cfg.height, cfg.width);
    let n_cells = ((h * w) as f64 / (cfg.field_size * cfg.field_size)).round().max(1.0) as usize;
    let sites: Vec<(f64, f64)> = (0..n_cells)
        .map(|_| (rng.random::<f64>() * h as f64, rng.random::<f64>() * w as f64))
        .collect();
    let mut cell_of = vec![0u32; h * w];
    let mut cell_area = vec![0usize; n_cells];
    for r in 0..h {
        for c in 0..w {
            let (y, x) = (r as f64 + 0.5, c as f64 + 0.5);
            let mut best = (f64::INFINITY, 0usize);
            for (k, &(sy, sx)) in sites.iter().enumerate() {
                let d = (y - sy).powi(2) + (x - sx).powi(2);
                if d < best.0 {
                    best = (d, k);
                }
            }
            cell_of[r * w + c] = best.1 as u32;
            cell_area[best.1] += 1;
        }
    }
    Layout {
        cell_of,
        n_cells,
        cell_area,
    }
}

/// Greedy area-deficit assignment of cells to categories.
fn assign_by_deficit(order: &[usize], area: &[usize], weights: &[f64], out: &mut [u8], codes: &[u8]) {
    let total: usize = order.iter().map(|&k| area[k]).sum();
    let mut assigned = vec![0f64; weights.len()];
    for &k in order {
        let mut best: Option<(f64, usize)> = None;
        for (j, &wj) in weights.iter().enumerate() {
            if wj <= 0.0 {
                continue;
            }
            let deficit = wj * total as f64 - assigned[j];
            if best.is_none_or(|(d, _)| deficit > d) {
                best = Some((deficit, j));
            }
        }
        let j = best.map(|b| b.1).unwrap_or(0);
        assigned[j] += area[k] as f64;
        out[k] = codes[j];
    }
}

/// Reflectance of (blue, green, red, nir) at season phase `phase` in [0, 1].
fn signature(class: u8, crown: bool, phase: f64) -> [f64; 4] {
    // 1 in the green months at both ends of the season, 0 mid dry season.
    let green = 1.0 - (std::f64::consts::PI * phase).sin();
    let (red, nir) = match class {
        CLASS_CROPLAND => (0.21 - 0.13 * green, 0.15 + 0.24 * green),
        CLASS_MIXED => (0.11 - 0.04 * green, 0.26 + 0.07 * green),
        CLASS_CASHEW if crown => (0.05, 0.40 + 0.01 * (2.0 * std::f64::consts::PI * phase).sin()),
        CLASS_CASHEW => (0.12, 0.21),
        _ => (0.30, 0.31),
    };
    if class == CLASS_BUILTUP {
        return [0.27, 0.29, red, nir];
    }
    [0.5 * red + 0.02, 0.5 * red + 0.1 * nir + 0.02, red, nir]
}

fn phase(t: usize, timesteps: usize) -> f64 {
    if timesteps <= 1 {
        0.5
    } else {
        t as f64 / (timesteps - 1) as f64
    }
}

/// Crown centres for one plantation cell, from a cell-specific stream so
/// layouts persist across years.
fn cell_crowns(
    cfg: &SceneConfig,
    layout: &Layout,
    cell: usize,
    high: bool,
    bbox: (usize, usize, usize, usize),
    seed: u64,
) -> Vec<(f32, f32)> {
    let mut rng = rng::rng(rng::indexed(seed, "crowns", cell as u64));
    let row_sp = if high {
        cfg.crown_row_spacing_high
    } else {
        cfg.crown_row_spacing_low
    };
    let col_sp = cfg.crown_in_row_spacing;
    let (r0, r1, c0, c1) = bbox;
    let off_r = rng.random::<f64>() * row_sp;
    let off_c = rng.random::<f64>() * col_sp;
    let mut out = Vec::new();
    let mut y = r0 as f64 + off_r;
    while y < r1 as f64 {
        let mut x = c0 as f64 + off_c;
        while x < c1 as f64 {
            let jy = y + rng.random_range(-0.5..0.5);
            let jx = x + rng.random_range(-0.5..0.5);
            let (pr, pc) = (jy.floor(), jx.floor());
            if pr >= 0.0 && pc >= 0.0 && (pr as usize) < cfg.height && (pc as usize) < cfg.width {
                let idx = pr as usize * cfg.width + pc as usize;
                if layout.cell_of[idx] as usize == cell {
                    out.push((jy as f32, jx as f32));
                }
            }
            x += col_sp;
        }
        y += row_sp;
    }
    out
}

fn cell_bboxes(layout: &Layout, h: usize, w: usize) -> Vec<(usize, usize, usize, usize)> {
    let mut bb = vec![(usize::MAX, 0, usize::MAX, 0); layout.n_cells];
    for r in 0..h {
        for c in 0..w {
            let k = layout.cell_of[r * w + c] as usize;
            let b = &mut bb[k];
            b.0 = b.0.min(r);
            b.1 = b.1.max(r + 1);
            b.2 = b.2.min(c);
            b.3 = b.3.max(c + 1);
        }
    }
    bb
}

/// Yearly class transitions: plantations and built-up persist; mixed and
/// cropland fields may convert to plantation or swap with each other.
fn evolve(classes: &mut [u8], high: &mut [bool], cfg: &SceneConfig, rng: &mut rng::Rng) {
    for k in 0..classes.len() {
        let u: f64 = rng.random();
        let flip: f64 = rng.random();
        match classes[k] {
            CLASS_MIXED | CLASS_CROPLAND => {
                if u < cfg.expansion_rate {
                    classes[k] = CLASS_CASHEW;
                    high[k] = flip < cfg.high_density_fraction;
                } else if u < cfg.expansion_rate + cfg.swap_rate {
                    classes[k] = if classes[k] == CLASS_MIXED {
                        CLASS_CROPLAND
                    } else {
                        CLASS_MIXED
                    };
                }
            }
            _ => {}
        }
    }
}

fn render(
    cfg: &SceneConfig,
    layout: &Layout,
    bboxes: &[(usize, usize, usize, usize)],
    classes: &[u8],
    high: &[bool],
    seed: u64,
    year: usize,
) -> SyntheticScene {
    let (h, w, t_n) = (cfg.height, cfg.width, cfg.timesteps);
    let n = h * w;
    let labels: Vec<u8> = layout.cell_of.iter().map(|&k| classes[k as usize]).collect();
    let density: Vec<u8> = layout
        .cell_of
        .iter()
        .map(|&k| {
            let k = k as usize;
            match (classes[k], high[k]) {
                (CLASS_CASHEW, true) => DENSITY_HIGH,
                (CLASS_CASHEW, false) => DENSITY_LOW,
                _ => NODATA_CODE,
            }
        })
        .collect();

    let mut crowns = Vec::new();
    let mut crown_px = vec![false; n];
    let rad = cfg.crown_radius;
    for k in 0..layout.n_cells {
        if classes[k] != CLASS_CASHEW {
            continue;
        }
        let centres = cell_crowns(cfg, layout, k, high[k], bboxes[k], seed);
        for &(cy, cx) in &centres {
            let (cy, cx) = (f64::from(cy), f64::from(cx));
            let rr0 = (cy - rad).floor().max(0.0) as usize;
            let rr1 = ((cy + rad).ceil() as usize).min(h);
            let cc0 = (cx - rad).floor().max(0.0) as usize;
            let cc1 = ((cx + rad).ceil() as usize).min(w);
            for r in rr0..rr1 {
                for c in cc0..cc1 {
                    let d2 = (r as f64 + 0.5 - cy).powi(2) + (c as f64 + 0.5 - cx).powi(2);
                    if d2 <= rad * rad && layout.cell_of[r * w + c] as usize == k {
                        crown_px[r * w + c] = true;
                    }
                }
            }
        }
        crowns.extend(centres);
    }

    let mut rng = rng::rng(rng::indexed(seed, "reflectance", year as u64));
    let gain = Normal::new(1.0, 0.04).expect("valid normal");
    let cell_gain: Vec<f64> = (0..layout.n_cells).map(|_| gain.sample(&mut rng)).collect();
    let cell_shift: Vec<f64> = (0..layout.n_cells).map(|_| rng.random_range(-0.05..0.05)).collect();
    let noise = Normal::new(0.0, f64::from(cfg.noise)).expect("valid normal");
    let mut values = vec![0f32; t_n * cfg.bands * n];
    for t in 0..t_n {
        for i in 0..n {
            let k = layout.cell_of[i] as usize;
            let ph = (phase(t, t_n) + cell_shift[k]).clamp(0.0, 1.0);
            let sig = signature(labels[i], crown_px[i], ph);
            for (b, s) in sig.iter().enumerate() {
                let v = s * cell_gain[k] + noise.sample(&mut rng);
                values[(t * cfg.bands + b) * n + i] = v.max(0.0) as f32;
            }
        }
    }
    let mut stack = RasterStack::new(t_n, cfg.bands, h, w, values, super::DEFAULT_NODATA)
        .expect("generated stack is well formed");
    stack.band_names = BANDS.iter().map(|s| s.to_string()).collect();
    stack.timestep_labels = if t_n == MONTHS.len() {
        MONTHS.iter().map(|s| format!("y{year}-{s}")).collect()
    } else {
        (0..t_n).map(|t| format!("y{year}-t{t}")).collect()
    };
    SyntheticScene {
        stack,
        labels: LabelMask::new(h, w, labels).expect("valid codes"),
        density_truth: LabelMask::new(h, w, density).expect("valid codes"),
        crowns,
    }
}

/// One synthetic year.
pub fn synth_scene(cfg: &SceneConfig, seed: u64) -> Result<SyntheticScene> {
    Ok(synth_series(cfg, 1, seed)?.remove(0))
}

/// `years` consecutive scenes over the same fields. Year 0 matches the
/// configured mixture; later years follow the transition rates.
pub fn synth_series(cfg: &SceneConfig, years: usize, seed: u64) -> Result<Vec<SyntheticScene>> {
    cfg.validate()?;
    if years == 0 {
        return Err(Error::InvalidArgument("years must be at least 1".into()));
    }
    let mut layout_rng = rng::rng_for(seed, "layout");
    let layout = voronoi(cfg, &mut layout_rng);
    let bboxes = cell_bboxes(&layout, cfg.height, cfg.width);

    let mut order: Vec<usize> = (0..layout.n_cells).collect();
    order.shuffle(&mut layout_rng);
    let mut classes = vec![CLASS_CROPLAND; layout.n_cells];
    let codes: Vec<u8> = (0..NUM_CLASSES as u8).collect();
    assign_by_deficit(&order, &layout.cell_area, &cfg.mixture, &mut classes, &codes);

    let mut high_code = vec![0u8; layout.n_cells];
    let plantation: Vec<usize> = order.iter().copied().filter(|&k| classes[k] == CLASS_CASHEW).collect();
    assign_by_deficit(
        &plantation,
        &layout.cell_area,
        &[cfg.high_density_fraction, 1.0 - cfg.high_density_fraction],
        &mut high_code,
        &[1, 0],
    );
    let mut high: Vec<bool> = high_code.iter().map(|&c| c == 1).collect();

    let mut evolve_rng = rng::rng_for(seed, "transitions");
    let mut out = Vec::with_capacity(years);
    for year in 0..years {
        if year > 0 {
            evolve(&mut classes, &mut high, cfg, &mut evolve_rng);
        }
        out.push(render(cfg, &layout, &bboxes, &classes, &high, seed, year));
    }
    Ok(out)
}
