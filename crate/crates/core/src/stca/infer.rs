use super::StcaModel;
use crate::error::{Error, Result};
use crate::nnprims::{Dropout, DropoutMode};
use crate::raster::{extract_patch, tile_origins, RasterStack};
use crate::rng;

/// Per-pixel summary of `R` dropout runs.
#[derive(Debug, Clone, PartialEq)]
pub struct McOutput {
    /// Mean class probabilities, `classes x pixels`.
    pub mean: Vec<f32>,
    /// Population standard deviation per class, `classes x pixels`.
    pub std: Vec<f32>,
    /// Standard deviation of the probability of the class with the
    /// highest mean, per pixel.
    pub unc: Vec<f32>,
}

/// Reduces stacked runs (`runs[r]` is `classes x pixels`). For each value
/// the mean is the `f64` sum over runs in order divided by `R`; the
/// standard deviation is `sqrt(sum (x - mean)^2 / R)` against that `f64`
/// mean. Both are rounded to `f32` once at the end. Ties for the top
/// class go to the lowest class code.
pub fn reduce_runs(runs: &[Vec<f32>], classes: usize) -> Result<McOutput> {
    let r = runs.len();
    if r == 0 {
        return Err(Error::InvalidArgument("at least one run is required".into()));
    }
    let n = runs[0].len();
    if runs.iter().any(|x| x.len() != n) || !n.is_multiple_of(classes) {
        return Err(Error::ShapeMismatch("runs differ in length".into()));
    }
    let mut mean = vec![0.0f32; n];
    let mut std = vec![0.0f32; n];
    for i in 0..n {
        let m = runs.iter().map(|x| f64::from(x[i])).sum::<f64>() / r as f64;
        let var = runs.iter().map(|x| (f64::from(x[i]) - m).powi(2)).sum::<f64>() / r as f64;
        mean[i] = m as f32;
        std[i] = var.sqrt() as f32;
    }
    let pixels = n / classes;
    let unc = (0..pixels)
        .map(|p| {
            let mut best = 0;
            for k in 1..classes {
                if mean[k * pixels + p] > mean[best * pixels + p] {
                    best = k;
                }
            }
            std[best * pixels + p]
        })
        .collect();
    Ok(McOutput { mean, std, unc })
}

fn run_seed(seed: u64, run: usize) -> u64 {
    rng::indexed(seed, "stca/mc", run as u64)
}

fn run_dropout(model: &StcaModel, seed: u64, run: usize) -> Dropout {
    if model.config.dropout > 0.0 {
        Dropout::new(DropoutMode::Mc, run_seed(seed, run))
    } else {
        Dropout::off()
    }
}

/// Class probabilities of each of `runs` dropout-on passes over a patch.
pub fn mc_runs(model: &StcaModel, patch: &[f32], nodata: f32, runs: usize, seed: u64) -> Result<Vec<Vec<f32>>> {
    if runs == 0 {
        return Err(Error::InvalidArgument("at least one run is required".into()));
    }
    (0..runs)
        .map(|r| model.probabilities(patch, nodata, run_dropout(model, seed, r)))
        .collect()
}

pub fn predict_mc(model: &StcaModel, patch: &[f32], nodata: f32, runs: usize, seed: u64) -> Result<McOutput> {
    reduce_runs(&mc_runs(model, patch, nodata, runs, seed)?, model.config.classes)
}

/// Scene-level class probabilities and uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityField {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    /// `classes x H x W`.
    pub probs: Vec<f32>,
    pub unc: Vec<f32>,
    pub model_id: String,
    pub runs: usize,
    pub seed: u64,
}

pub const UNCERTAINTY_BAND: &str = "uncertainty";

impl ProbabilityField {
    pub fn prob_plane(&self, class: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.probs[class * n..(class + 1) * n]
    }

    /// A single-timestep stack: one band per class, then uncertainty.
    pub fn to_stack(&self) -> Result<RasterStack> {
        let mut values = self.probs.clone();
        values.extend_from_slice(&self.unc);
        let mut s = RasterStack::new(1, self.classes + 1, self.height, self.width, values, crate::raster::DEFAULT_NODATA)?;
        s.band_names = (0..self.classes).map(|k| format!("p{k}")).chain([UNCERTAINTY_BAND.to_string()]).collect();
        Ok(s)
    }

    pub fn from_stack(stack: &RasterStack) -> Result<Self> {
        if stack.timesteps() != 1 || stack.bands() < 3 {
            return Err(Error::ShapeMismatch(format!(
                "probability field needs 1 timestep and classes + 1 bands, got {}x{}",
                stack.timesteps(),
                stack.bands()
            )));
        }
        let classes = stack.bands() - 1;
        let n = stack.height() * stack.width();
        let v = stack.values();
        Ok(Self {
            height: stack.height(),
            width: stack.width(),
            classes,
            probs: v[..classes * n].to_vec(),
            unc: v[classes * n..].to_vec(),
            model_id: String::new(),
            runs: 0,
            seed: 0,
        })
    }
}

/// Runs the model over overlapping patches of a normalized stack. Within
/// each dropout run, every pixel's probabilities are the plain average of
/// all patches covering it (the same dropout seed serves every patch of a
/// run); runs are then reduced per pixel as in [`reduce_runs`].
pub fn infer_scene(model: &StcaModel, stack: &RasterStack, runs: usize, seed: u64, stride: usize) -> Result<ProbabilityField> {
    let cfg = &model.config;
    let s = cfg.patch_size;
    if stack.height() < s || stack.width() < s {
        return Err(Error::InvalidArgument(format!(
            "stack {}x{} smaller than patch size {s}",
            stack.height(),
            stack.width()
        )));
    }
    if stack.timesteps() != cfg.timesteps || stack.bands() != cfg.bands {
        return Err(Error::ShapeMismatch(format!(
            "stack has {} timesteps x {} bands, model expects {} x {}",
            stack.timesteps(),
            stack.bands(),
            cfg.timesteps,
            cfg.bands
        )));
    }
    if stride == 0 || stride > s {
        return Err(Error::InvalidArgument(format!("stride {stride} must be in 1..={s}")));
    }
    if runs == 0 {
        return Err(Error::InvalidArgument("at least one run is required".into()));
    }
    let (h, w, k) = (stack.height(), stack.width(), cfg.classes);
    let rows = tile_origins(h, s, stride);
    let cols = tile_origins(w, s, stride);
    let mut count = vec![0u32; h * w];
    for &r0 in &rows {
        for &c0 in &cols {
            for r in r0..r0 + s {
                for c in c0..c0 + s {
                    count[r * w + c] += 1;
                }
            }
        }
    }
    let patches: Vec<((usize, usize), Vec<f32>)> = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .map(|(r, c)| ((r, c), extract_patch(stack, r, c, s)))
        .collect();
    let mut run_fields = Vec::with_capacity(runs);
    for run in 0..runs {
        let mut acc = vec![0.0f64; k * h * w];
        for ((r0, c0), patch) in &patches {
            let p = model.probabilities(patch, stack.nodata, run_dropout(model, seed, run))?;
            for cls in 0..k {
                for i in 0..s {
                    for j in 0..s {
                        acc[cls * h * w + (r0 + i) * w + c0 + j] += f64::from(p[cls * s * s + i * s + j]);
                    }
                }
            }
        }
        let field: Vec<f32> = acc
            .iter()
            .enumerate()
            .map(|(i, &v)| (v / f64::from(count[i % (h * w)])) as f32)
            .collect();
        run_fields.push(field);
    }
    let out = reduce_runs(&run_fields, k)?;
    Ok(ProbabilityField {
        height: h,
        width: w,
        classes: k,
        probs: out.mean,
        unc: out.unc,
        model_id: model.id(),
        runs,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_runs_by_hand() {
        // One pixel, two classes: run probabilities (0.6, 0.4) and (0.8, 0.2).
        let out = reduce_runs(&[vec![0.6, 0.4], vec![0.8, 0.2]], 2).unwrap();
        assert!((out.mean[0] - 0.7).abs() < 1e-6);
        assert!((out.unc[0] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn single_run_has_zero_uncertainty() {
        let out = reduce_runs(&[vec![0.3, 0.7, 0.5, 0.5]], 2).unwrap();
        assert!(out.unc.iter().all(|&u| u == 0.0));
        assert!(reduce_runs(&[], 2).is_err());
    }
}
