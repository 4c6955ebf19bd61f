//! Patch segmentation model: a U-Net style encoder shared across
//! timesteps, a per-pixel BiLSTM with temporal attention at the
//! bottleneck, and a decoder fed by time-averaged skip connections.
//! A plain U-Net mode handles single-date imagery.

mod infer;
mod train;

pub use infer::{infer_scene, mc_runs, predict_mc, reduce_runs, McOutput, ProbabilityField};
pub use train::{train, TrainOptions, TrainReport};

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nnprims::{bilstm, Dropout, Init, LstmParams, ParameterSet, Tape, Tensor, Var};
use crate::raster::NUM_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    MultiTemporal,
    MonoTemporal,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi_temporal" | "multi" => Ok(Mode::MultiTemporal),
            "mono_temporal" | "mono" => Ok(Mode::MonoTemporal),
            _ => Err(Error::InvalidArgument(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StcaConfig {
    pub mode: Mode,
    /// Number of convolution levels; `depth - 1` pooling steps.
    pub depth: usize,
    /// Channels at the first level; doubled at each deeper level.
    pub base_channels: usize,
    pub timesteps: usize,
    pub bands: usize,
    pub classes: usize,
    pub patch_size: usize,
    pub dropout: f32,
    pub mc_runs: usize,
    pub lstm_hidden: usize,
    pub attention_dim: usize,
}

impl Default for StcaConfig {
    fn default() -> Self {
        Self {
            mode: Mode::MultiTemporal,
            depth: 5,
            base_channels: 8,
            timesteps: 7,
            bands: 4,
            classes: NUM_CLASSES,
            patch_size: 64,
            dropout: 0.3,
            mc_runs: 10,
            lstm_hidden: 16,
            attention_dim: 16,
        }
    }
}

impl StcaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.depth == 0 || self.base_channels == 0 || self.timesteps == 0 || self.bands == 0 {
            return bad("depth, base channels, timesteps and bands must be positive".into());
        }
        if self.classes < 2 {
            return bad(format!("{} classes", self.classes));
        }
        let unit = 1usize << (self.depth - 1);
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(unit) {
            return bad(format!("patch size {} not divisible by {unit}", self.patch_size));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout rate {} outside [0, 1)", self.dropout));
        }
        if self.mc_runs == 0 {
            return bad("mc_runs must be at least 1".into());
        }
        if self.mode == Mode::MultiTemporal && (self.lstm_hidden == 0 || self.attention_dim == 0) {
            return bad("lstm_hidden and attention_dim must be positive".into());
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    fn input_channels(&self) -> usize {
        match self.mode {
            Mode::MultiTemporal => self.bands,
            Mode::MonoTemporal => self.bands * self.timesteps,
        }
    }

    /// Channels leaving the bottleneck.
    fn bottleneck_channels(&self) -> usize {
        match self.mode {
            Mode::MultiTemporal => 2 * self.lstm_hidden,
            Mode::MonoTemporal => self.channels(self.depth - 1),
        }
    }

    pub fn patch_len(&self) -> usize {
        self.timesteps * self.bands * self.patch_size * self.patch_size
    }
}

/// Configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StcaModel {
    pub config: StcaConfig,
    pub params: ParameterSet,
}

fn add_conv(ps: &mut ParameterSet, name: &str, out_c: usize, in_c: usize, k: usize, zero: bool) -> Result<()> {
    let init = if zero { Init::Zeros } else { Init::relu(in_c * k * k) };
    ps.add(&format!("{name}.w"), vec![out_c, in_c, k, k], init)?;
    ps.add(&format!("{name}.b"), vec![out_c], Init::Zeros)?;
    Ok(())
}

impl StcaModel {
    /// Initializes every parameter from `seed`.
    ///
    /// The classification head starts at zero so that all classes are
    /// treated alike at initialization; relabeling the classes then
    /// relabels the trained outputs.
    pub fn build(config: StcaConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut ps = ParameterSet::new(seed);
        let mut in_c = config.input_channels();
        for l in 0..config.depth {
            add_conv(&mut ps, &format!("enc{l}"), config.channels(l), in_c, 3, false)?;
            in_c = config.channels(l);
        }
        if config.mode == Mode::MultiTemporal {
            let c = config.channels(config.depth - 1);
            LstmParams::register(&mut ps, "lstm.fwd", c, config.lstm_hidden)?;
            LstmParams::register(&mut ps, "lstm.bwd", c, config.lstm_hidden)?;
            let d = 2 * config.lstm_hidden;
            ps.add("att.w", vec![d, config.attention_dim], Init::linear(d))?;
            ps.add("att.b", vec![config.attention_dim], Init::Zeros)?;
            ps.add("att.u", vec![config.attention_dim], Init::linear(config.attention_dim))?;
        }
        let mut prev = config.bottleneck_channels();
        for l in (0..config.depth - 1).rev() {
            let c = config.channels(l);
            ps.add(&format!("up{l}.w"), vec![prev, c, 2, 2], Init::relu(prev))?;
            ps.add(&format!("up{l}.b"), vec![c], Init::Zeros)?;
            add_conv(&mut ps, &format!("dec{l}"), c, 2 * c, 3, false)?;
            prev = c;
        }
        add_conv(&mut ps, "head", config.classes, prev, 3, true)?;
        Ok(Self { config, params: ps })
    }

    pub fn id(&self) -> String {
        self.params.hash()
    }

    /// Records a forward pass of one `T x B x S x S` patch on `tape` and
    /// returns the logits (`classes x S x S`). Nodata samples enter the
    /// network as zero.
    pub fn forward(&self, tape: &mut Tape, patch: &[f32], nodata: f32) -> Result<Var> {
        let cfg = &self.config;
        if patch.len() != cfg.patch_len() {
            return Err(Error::ShapeMismatch(format!(
                "patch has {} values, model expects {}",
                patch.len(),
                cfg.patch_len()
            )));
        }
        let s = cfg.patch_size;
        let clean = |v: &[f32]| -> Vec<f32> { v.iter().map(|&x| if x == nodata || !x.is_finite() { 0.0 } else { x }).collect() };
        let inputs: Vec<Var> = match cfg.mode {
            Mode::MultiTemporal => patch
                .chunks(cfg.bands * s * s)
                .map(|c| tape.leaf(Tensor::new(vec![cfg.bands, s, s], clean(c)).expect("patch chunk")))
                .collect(),
            Mode::MonoTemporal => vec![tape.leaf(Tensor::new(vec![cfg.input_channels(), s, s], clean(patch))?)],
        };
        // Encoder, shared across timesteps.
        let mut levels: Vec<Vec<Var>> = vec![Vec::with_capacity(inputs.len()); cfg.depth];
        for &x in &inputs {
            let mut h = x;
            for (l, level) in levels.iter_mut().enumerate() {
                if l > 0 {
                    h = tape.maxpool2(h)?;
                }
                let w = tape.param_named(&format!("enc{l}.w"))?;
                let b = tape.param_named(&format!("enc{l}.b"))?;
                let c = tape.conv2d(h, w, b)?;
                h = tape.relu(c);
                level.push(h);
            }
        }
        let deep = &levels[cfg.depth - 1];
        let mut y = match cfg.mode {
            Mode::MonoTemporal => deep[0],
            Mode::MultiTemporal => {
                let shape = tape.shape(deep[0]).to_vec();
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let mut rows = Vec::with_capacity(deep.len());
                for &f in deep {
                    let m = tape.reshape(f, vec![c, h * w])?;
                    rows.push(tape.transpose(m)?);
                }
                let fwd = LstmParams::lookup(&self.params, "lstm.fwd")?;
                let bwd = LstmParams::lookup(&self.params, "lstm.bwd")?;
                let hs = bilstm(tape, &rows, &fwd, &bwd)?;
                let (aw, ab, au) = (
                    tape.param_named("att.w")?,
                    tape.param_named("att.b")?,
                    tape.param_named("att.u")?,
                );
                let (ctx, _) = tape.attention(&hs, aw, ab, au)?;
                let ct = tape.transpose(ctx)?;
                tape.reshape(ct, vec![cfg.bottleneck_channels(), h, w])?
            }
        };
        y = tape.dropout(y, cfg.dropout)?;
        for l in (0..cfg.depth - 1).rev() {
            let skip = if levels[l].len() == 1 { levels[l][0] } else { tape.mean(&levels[l])? };
            let (uw, ub) = (tape.param_named(&format!("up{l}.w"))?, tape.param_named(&format!("up{l}.b"))?);
            let up = tape.conv_t2(y, uw, ub)?;
            let cat = tape.concat(&[up, skip])?;
            let (dw, db) = (tape.param_named(&format!("dec{l}.w"))?, tape.param_named(&format!("dec{l}.b"))?);
            let c = tape.conv2d(cat, dw, db)?;
            let r = tape.relu(c);
            y = tape.dropout(r, cfg.dropout)?;
        }
        let (hw, hb) = (tape.param_named("head.w")?, tape.param_named("head.b")?);
        tape.conv2d(y, hw, hb)
    }

    /// Class probabilities (`classes x S x S`) for one patch.
    pub fn probabilities(&self, patch: &[f32], nodata: f32, dropout: Dropout) -> Result<Vec<f32>> {
        let mut tape = Tape::with_dropout(&self.params, dropout);
        let logits = self.forward(&mut tape, patch, nodata)?;
        let out = crate::nnprims::loss::softmax_channels(tape.value(logits).data(), self.config.classes);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged("non-finite class probabilities".into()));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({ "model": "stca", "config": self.config });
        self.params.save(path, &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, meta) = ParameterSet::load(path)?;
        if meta.get("model").and_then(|m| m.as_str()) != Some("stca") {
            return Err(Error::format(path, "not a segmentation checkpoint"));
        }
        let config: StcaConfig = serde_json::from_value(meta["config"].clone())
            .map_err(|e| Error::format(path, format!("bad model config: {e}")))?;
        let fresh = Self::build(config.clone(), params.seed())?;
        let mut model = Self { config, params: fresh.params };
        model
            .params
            .copy_values_from(&params)
            .map_err(|e| Error::format(path, e.to_string()))?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mode: Mode, timesteps: usize) -> StcaConfig {
        StcaConfig { mode, depth: 3, base_channels: 4, timesteps, patch_size: 16, lstm_hidden: 4, attention_dim: 4, ..StcaConfig::default() }
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = StcaModel::build(StcaConfig::default(), 3).unwrap();
        let b = StcaModel::build(StcaConfig::default(), 3).unwrap();
        let c = StcaModel::build(StcaConfig::default(), 4).unwrap();
        assert_eq!(a.id(), b.id());
        assert_ne!(a.id(), c.id());
    }

    #[test]
    fn zero_input_gives_finite_logits() {
        let m = StcaModel::build(StcaConfig::default(), 1).unwrap();
        let mut tape = Tape::new(&m.params);
        let y = m.forward(&mut tape, &vec![0.0; m.config.patch_len()], -9999.0).unwrap();
        assert_eq!(tape.shape(y), &[4, 64, 64]);
        assert!(tape.value(y).all_finite());
    }

    #[test]
    fn single_timestep_attention_is_identity() {
        let m = StcaModel::build(small(Mode::MultiTemporal, 1), 2).unwrap();
        let mut tape = Tape::new(&m.params);
        let x = tape.leaf(Tensor::full(vec![3, 8], 0.3));
        let (w, b, u) = (tape.param_named("att.w").unwrap(), tape.param_named("att.b").unwrap(), tape.param_named("att.u").unwrap());
        let (ctx, weights) = tape.attention(&[x], w, b, u).unwrap();
        assert!(weights.iter().all(|&v| v == 1.0));
        assert_eq!(tape.value(ctx), tape.value(x));
    }

    #[test]
    fn mono_and_multi_shapes_agree_at_t1() {
        let patch = vec![0.25; 4 * 16 * 16];
        let mono = StcaModel::build(small(Mode::MonoTemporal, 1), 5).unwrap();
        let multi = StcaModel::build(small(Mode::MultiTemporal, 1), 5).unwrap();
        let a = mono.probabilities(&patch, -9999.0, Dropout::off()).unwrap();
        let b = multi.probabilities(&patch, -9999.0, Dropout::off()).unwrap();
        assert_eq!(a.len(), b.len());
    }

    #[test]
    fn dropout_off_is_bit_identical() {
        let m = StcaModel::build(small(Mode::MultiTemporal, 3), 6).unwrap();
        let patch: Vec<f32> = (0..m.config.patch_len()).map(|i| (i as f32 * 0.013).sin()).collect();
        let a = m.probabilities(&patch, -9999.0, Dropout::off()).unwrap();
        let b = m.probabilities(&patch, -9999.0, Dropout::off()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_patch_size_rejected() {
        let cfg = StcaConfig { patch_size: 60, ..StcaConfig::default() };
        assert!(StcaModel::build(cfg, 0).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = StcaModel::build(small(Mode::MultiTemporal, 2), 8).unwrap();
        let dir = std::env::temp_dir().join(format!("stca-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.ckpt");
        m.save(&path).unwrap();
        let back = StcaModel::load(&path).unwrap();
        assert_eq!(back.id(), m.id());
        assert_eq!(back.config, m.config);
        std::fs::remove_dir_all(dir).ok();
    }
}
