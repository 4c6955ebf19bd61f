//! Spatiotemporal autoencoder. The encoder mirrors the segmentation
//! encoder without skip connections and ends in a linear embedding; the
//! decoder unrolls an LSTM for `T` steps from the embedding and maps each
//! hidden state back to a `B x S x S` image through transposed
//! convolutions.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::dec::{Embedder, Points};
use crate::error::{Error, Result};
use crate::nnprims::{bilstm, lstm, AdamConfig, Gradients, Init, LstmParams, ParameterSet, Tape, Tensor, Var};
use crate::raster::PatchSet;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub timesteps: usize,
    pub bands: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub lstm_hidden: usize,
    pub attention_dim: usize,
    pub decoder_hidden: usize,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            depth: 5,
            base_channels: 8,
            timesteps: 7,
            bands: 4,
            patch_size: 32,
            embed_dim: 16,
            lstm_hidden: 16,
            attention_dim: 16,
            decoder_hidden: 32,
        }
    }
}

impl AutoencoderConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.depth, self.base_channels, self.timesteps, self.bands, self.embed_dim, self.lstm_hidden, self.attention_dim, self.decoder_hidden]
            .contains(&0)
        {
            return Err(Error::InvalidArgument("autoencoder sizes must be positive".into()));
        }
        let unit = 1usize << (self.depth - 1);
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(unit) {
            return Err(Error::InvalidArgument(format!("patch size {} not divisible by {unit}", self.patch_size)));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    fn bottleneck_side(&self) -> usize {
        self.patch_size >> (self.depth - 1)
    }

    pub fn patch_len(&self) -> usize {
        self.timesteps * self.bands * self.patch_size * self.patch_size
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub config: AutoencoderConfig,
    pub params: ParameterSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOptions {
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        Self { epochs: 20, lr: 1e-3, batch_size: 8, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    /// Entry `e`: mean reconstruction error over all patches after `e`
    /// epochs.
    pub loss_curve: Vec<f64>,
    pub best_epoch: usize,
}

fn param(tape: &mut Tape, name: &str) -> Result<Var> {
    tape.param_named(name)
}

impl Autoencoder {
    pub fn build(config: AutoencoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut ps = ParameterSet::new(seed);
        let mut in_c = c.bands;
        for l in 0..c.depth {
            let out = c.channels(l);
            ps.add(&format!("enc{l}.w"), vec![out, in_c, 3, 3], Init::relu(in_c * 9))?;
            ps.add(&format!("enc{l}.b"), vec![out], Init::Zeros)?;
            in_c = out;
        }
        let deep = c.channels(c.depth - 1);
        LstmParams::register(&mut ps, "lstm.fwd", deep, c.lstm_hidden)?;
        LstmParams::register(&mut ps, "lstm.bwd", deep, c.lstm_hidden)?;
        let two_h = 2 * c.lstm_hidden;
        ps.add("att.w", vec![two_h, c.attention_dim], Init::linear(two_h))?;
        ps.add("att.b", vec![c.attention_dim], Init::Zeros)?;
        ps.add("att.u", vec![c.attention_dim], Init::linear(c.attention_dim))?;
        let side = c.bottleneck_side();
        let flat = side * side * two_h;
        ps.add("embed.w", vec![flat, c.embed_dim], Init::linear(flat))?;
        ps.add("embed.b", vec![c.embed_dim], Init::Zeros)?;
        LstmParams::register(&mut ps, "seq", c.embed_dim, c.decoder_hidden)?;
        let seed_len = deep * side * side;
        ps.add("seed.w", vec![c.decoder_hidden, seed_len], Init::linear(c.decoder_hidden))?;
        ps.add("seed.b", vec![seed_len], Init::Zeros)?;
        let mut prev = deep;
        for l in (0..c.depth - 1).rev() {
            let out = c.channels(l);
            ps.add(&format!("up{l}.w"), vec![prev, out, 2, 2], Init::relu(prev))?;
            ps.add(&format!("up{l}.b"), vec![out], Init::Zeros)?;
            ps.add(&format!("dec{l}.w"), vec![out, out, 3, 3], Init::relu(out * 9))?;
            ps.add(&format!("dec{l}.b"), vec![out], Init::Zeros)?;
            prev = out;
        }
        ps.add("head.w", vec![c.bands, prev, 3, 3], Init::linear(prev * 9))?;
        ps.add("head.b", vec![c.bands], Init::Zeros)?;
        Ok(Self { config, params: ps })
    }

    pub fn id(&self) -> String {
        self.params.hash()
    }

    /// Records the embedding (`[embed_dim]`) of one `T x B x S x S` patch.
    pub fn encode(&self, tape: &mut Tape, patch: &[f32], nodata: f32) -> Result<Var> {
        let c = &self.config;
        if patch.len() != c.patch_len() {
            return Err(Error::ShapeMismatch(format!("patch has {} values, expected {}", patch.len(), c.patch_len())));
        }
        let s = c.patch_size;
        let mut rows = Vec::with_capacity(c.timesteps);
        for chunk in patch.chunks(c.bands * s * s) {
            let clean: Vec<f32> = chunk.iter().map(|&v| if v == nodata || !v.is_finite() { 0.0 } else { v }).collect();
            let mut h = tape.leaf(Tensor::new(vec![c.bands, s, s], clean)?);
            for l in 0..c.depth {
                if l > 0 {
                    h = tape.maxpool2(h)?;
                }
                let (w, b) = (param(tape, &format!("enc{l}.w"))?, param(tape, &format!("enc{l}.b"))?);
                let y = tape.conv2d(h, w, b)?;
                h = tape.relu(y);
            }
            let shape = tape.shape(h).to_vec();
            let m = tape.reshape(h, vec![shape[0], shape[1] * shape[2]])?;
            rows.push(tape.transpose(m)?);
        }
        let fwd = LstmParams::lookup(tape.params(), "lstm.fwd")?;
        let bwd = LstmParams::lookup(tape.params(), "lstm.bwd")?;
        let hs = bilstm(tape, &rows, &fwd, &bwd)?;
        let (aw, ab, au) = (param(tape, "att.w")?, param(tape, "att.b")?, param(tape, "att.u")?);
        let (ctx, _) = tape.attention(&hs, aw, ab, au)?;
        let n = tape.value(ctx).len();
        let flat = tape.reshape(ctx, vec![1, n])?;
        let (ew, eb) = (param(tape, "embed.w")?, param(tape, "embed.b")?);
        let z = tape.linear(flat, ew, Some(eb))?;
        tape.reshape(z, vec![c.embed_dim])
    }

    /// Records the reconstruction (`T x B x S x S` as `T` separate
    /// `B x S x S` values) of an embedding.
    pub fn decode(&self, tape: &mut Tape, z: Var) -> Result<Vec<Var>> {
        let c = &self.config;
        let zr = tape.reshape(z, vec![1, c.embed_dim])?;
        let seq = LstmParams::lookup(tape.params(), "seq")?;
        let inputs = vec![zr; c.timesteps];
        let hs = lstm(tape, &inputs, &seq, false)?;
        let side = c.bottleneck_side();
        let deep = c.channels(c.depth - 1);
        let mut out = Vec::with_capacity(c.timesteps);
        for h in hs {
            let (sw, sb) = (param(tape, "seed.w")?, param(tape, "seed.b")?);
            let y = tape.linear(h, sw, Some(sb))?;
            let y = tape.relu(y);
            let mut x = tape.reshape(y, vec![deep, side, side])?;
            for l in (0..c.depth - 1).rev() {
                let (uw, ub) = (param(tape, &format!("up{l}.w"))?, param(tape, &format!("up{l}.b"))?);
                let u = tape.conv_t2(x, uw, ub)?;
                let u = tape.relu(u);
                let (dw, db) = (param(tape, &format!("dec{l}.w"))?, param(tape, &format!("dec{l}.b"))?);
                let d = tape.conv2d(u, dw, db)?;
                x = tape.relu(d);
            }
            let (hw, hb) = (param(tape, "head.w")?, param(tape, "head.b")?);
            out.push(tape.conv2d(x, hw, hb)?);
        }
        Ok(out)
    }

    /// Mean squared reconstruction error of one patch, recorded on `tape`.
    fn reconstruction_loss(&self, tape: &mut Tape, patch: &[f32], nodata: f32) -> Result<Var> {
        let z = self.encode(tape, patch, nodata)?;
        let rec = self.decode(tape, z)?;
        let all = tape.concat(&rec)?;
        let target: Vec<f32> = patch.iter().map(|&v| if v == nodata || !v.is_finite() { 0.0 } else { v }).collect();
        let flat = tape.reshape(all, vec![target.len()])?;
        tape.mse(flat, &target)
    }

    pub fn mean_loss(&self, set: &PatchSet) -> Result<f64> {
        let mut sum = 0.0;
        for p in &set.patches {
            let mut tape = Tape::new(&self.params);
            let l = self.reconstruction_loss(&mut tape, p, set.nodata)?;
            sum += f64::from(tape.value(l).data()[0]);
        }
        Ok(sum / set.len().max(1) as f64)
    }

    /// Embeddings of every patch in order.
    pub fn embed(&self, set: &PatchSet) -> Result<Points> {
        let mut values = Vec::with_capacity(set.len() * self.config.embed_dim);
        for p in &set.patches {
            let mut tape = Tape::new(&self.params);
            let z = self.encode(&mut tape, p, set.nodata)?;
            values.extend_from_slice(tape.value(z).data());
        }
        Points::new(self.config.embed_dim, values)
    }

    /// Trains encoder and decoder on reconstruction error, keeping the
    /// parameters of the best epoch.
    pub fn pretrain(&mut self, set: &PatchSet, opts: &PretrainOptions) -> Result<PretrainReport> {
        let c = &self.config;
        if set.is_empty() {
            return Err(Error::InsufficientData("no patches to pretrain on".into()));
        }
        if (set.size, set.timesteps, set.bands) != (c.patch_size, c.timesteps, c.bands) {
            return Err(Error::ShapeMismatch(format!(
                "patches are {}x{}x{}x{}, autoencoder expects {}x{}x{}x{}",
                set.timesteps, set.bands, set.size, set.size, c.timesteps, c.bands, c.patch_size, c.patch_size
            )));
        }
        if opts.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        let adam = AdamConfig { lr: opts.lr, ..AdamConfig::default() };
        let l0 = self.mean_loss(set)?;
        let mut curve = vec![l0];
        let mut best = (l0, 0, self.params.clone());
        let mut order: Vec<usize> = (0..set.len()).collect();
        let mut shuffler = rng::rng_for(opts.seed, "ae/shuffle");
        for epoch in 1..=opts.epochs {
            order.shuffle(&mut shuffler);
            for batch in order.chunks(opts.batch_size) {
                let mut grads = Gradients::new(self.params.len());
                for &i in batch {
                    let mut tape = Tape::new(&self.params);
                    let l = self.reconstruction_loss(&mut tape, &set.patches[i], set.nodata)?;
                    grads.merge(&tape.backward(l, 1.0)?.params);
                }
                grads.scale(1.0 / batch.len() as f32);
                self.params.adam_step(&grads, &adam)?;
            }
            let l = self.mean_loss(set)?;
            if !l.is_finite() {
                return Err(Error::Diverged(format!("non-finite reconstruction loss after epoch {epoch}")));
            }
            curve.push(l);
            if l < best.0 {
                best = (l, epoch, self.params.clone());
            }
        }
        self.params = best.2;
        Ok(PretrainReport { loss_curve: curve, best_epoch: best.1 })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({ "model": "autoencoder", "config": self.config });
        self.params.save(path, &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (params, meta) = ParameterSet::load(path)?;
        if meta.get("model").and_then(|m| m.as_str()) != Some("autoencoder") {
            return Err(Error::format(path, "not an autoencoder checkpoint"));
        }
        let config: AutoencoderConfig = serde_json::from_value(meta["config"].clone())
            .map_err(|e| Error::format(path, format!("bad autoencoder config: {e}")))?;
        let mut model = Self::build(config, params.seed())?;
        model.params.copy_values_from(&params).map_err(|e| Error::format(path, e.to_string()))?;
        Ok(model)
    }
}

/// The encoder of an autoencoder over a fixed patch set, as a trainable
/// [`Embedder`].
pub struct EncoderEmbedder<'a> {
    pub model: &'a mut Autoencoder,
    pub patches: &'a PatchSet,
}

impl Embedder for EncoderEmbedder<'_> {
    fn count(&self) -> usize {
        self.patches.len()
    }
    fn dim(&self) -> usize {
        self.model.config.embed_dim
    }
    fn params(&self) -> &ParameterSet {
        &self.model.params
    }
    fn absorb(&mut self, trained: &ParameterSet) -> Result<()> {
        self.model.params.copy_matching(trained)
    }
    fn embed_on_tape(&self, tape: &mut Tape, i: usize) -> Result<Var> {
        self.model.encode(tape, &self.patches.patches[i], self.patches.nodata)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> AutoencoderConfig {
        AutoencoderConfig {
            depth: 3,
            base_channels: 4,
            timesteps: 2,
            bands: 2,
            patch_size: 8,
            embed_dim: 4,
            lstm_hidden: 4,
            attention_dim: 4,
            decoder_hidden: 8,
        }
    }

    fn set(patches: Vec<Vec<f32>>, cfg: &AutoencoderConfig) -> PatchSet {
        PatchSet {
            size: cfg.patch_size,
            stride: cfg.patch_size,
            timesteps: cfg.timesteps,
            bands: cfg.bands,
            nodata: -9999.0,
            origins: vec![(0, 0); patches.len()],
            patches,
            labels: None,
        }
    }

    #[test]
    fn same_seed_same_weights() {
        assert_eq!(Autoencoder::build(tiny(), 4).unwrap().id(), Autoencoder::build(tiny(), 4).unwrap().id());
    }

    #[test]
    fn reconstruction_has_input_shape() {
        let ae = Autoencoder::build(AutoencoderConfig::default(), 1).unwrap();
        let mut tape = Tape::new(&ae.params);
        let z = ae.encode(&mut tape, &vec![0.1; ae.config.patch_len()], -9999.0).unwrap();
        assert_eq!(tape.shape(z), &[16]);
        let rec = ae.decode(&mut tape, z).unwrap();
        assert_eq!(rec.len(), 7);
        assert!(rec.iter().all(|&r| tape.shape(r) == [4, 32, 32]));
    }

    #[test]
    fn embedding_is_deterministic() {
        let cfg = tiny();
        let ae = Autoencoder::build(cfg.clone(), 2).unwrap();
        let p: Vec<f32> = (0..cfg.patch_len()).map(|i| (i as f32 * 0.37).sin()).collect();
        let s = set(vec![p.clone(), p], &cfg);
        let e = ae.embed(&s).unwrap();
        assert_eq!(e.row(0), e.row(1));
    }

    #[test]
    fn constant_patches_are_learned() {
        let cfg = tiny();
        let mut ae = Autoencoder::build(cfg.clone(), 3).unwrap();
        let s = set(vec![vec![0.4; cfg.patch_len()]; 4], &cfg);
        let rep = ae.pretrain(&s, &PretrainOptions { epochs: 300, lr: 1e-2, batch_size: 4, seed: 0 }).unwrap();
        let last = rep.loss_curve[rep.best_epoch];
        assert!(last < 1e-4, "best loss {last}");
    }
}
