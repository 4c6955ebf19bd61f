use rand::seq::SliceRandom;

use super::StcaModel;
use crate::error::{Error, Result};
use crate::nnprims::{AdamConfig, Dropout, DropoutMode, Gradients, Tape};
use crate::raster::{PatchSet, NODATA_CODE};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub val_fraction: f64,
    /// Stop after this many epochs without a better validation loss.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { epochs: 30, lr: 1e-3, batch_size: 8, val_fraction: 0.1, patience: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Entry `e`: mean training cross-entropy, dropout off, after `e`
    /// epochs (entry 0 is the initial model).
    pub train_curve: Vec<f64>,
    /// Same for the validation split; empty without one.
    pub val_curve: Vec<f64>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub warnings: Vec<String>,
}

/// Mean cross-entropy over valid pixels of the given patches, dropout off.
pub(crate) fn mean_loss(model: &StcaModel, set: &PatchSet, idx: &[usize]) -> Result<f64> {
    let labels = set.labels.as_ref().expect("checked by caller");
    let mut sum = 0.0;
    let mut valid = 0usize;
    for &i in idx {
        let mut tape = Tape::new(&model.params);
        let logits = model.forward(&mut tape, &set.patches[i], set.nodata)?;
        let (loss, n) = tape.cross_entropy(logits, &labels[i])?;
        sum += f64::from(tape.value(loss).data()[0]);
        valid += n;
    }
    if valid == 0 {
        return Err(Error::InsufficientData("no labeled pixels".into()));
    }
    Ok(sum / valid as f64)
}

fn split(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::rng_for(seed, "stca/split"));
    let n_val = ((n as f64) * val_fraction).round() as usize;
    let n_val = n_val.min(n.saturating_sub(1));
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    (train, val)
}

/// Trains with Adam on mean pixel-wise cross-entropy and keeps the
/// parameters of the epoch with the lowest validation loss (training loss
/// when there is no validation split).
pub fn train(model: &mut StcaModel, set: &PatchSet, opts: &TrainOptions) -> Result<TrainReport> {
    let labels = set
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("training patches carry no labels".into()))?;
    if set.is_empty() {
        return Err(Error::InsufficientData("no training patches".into()));
    }
    if set.size != model.config.patch_size || set.timesteps != model.config.timesteps || set.bands != model.config.bands {
        return Err(Error::ShapeMismatch(format!(
            "patches are {}x{}x{}x{}, model expects {}x{}x{}x{}",
            set.timesteps, set.bands, set.size, set.size, model.config.timesteps, model.config.bands,
            model.config.patch_size, model.config.patch_size
        )));
    }
    if opts.batch_size == 0 || !(0.0..1.0).contains(&opts.val_fraction) {
        return Err(Error::InvalidArgument("batch size must be positive and val_fraction in [0, 1)".into()));
    }
    let mut warnings = Vec::new();
    let mut present = [false; 256];
    for l in labels.iter().flatten() {
        present[*l as usize] = true;
    }
    let n_classes = (0..model.config.classes).filter(|&k| present[k]).count();
    if (0..256).any(|k| present[k] && k >= model.config.classes && k != NODATA_CODE as usize) {
        return Err(Error::InvalidArgument("label codes outside the class set".into()));
    }
    if n_classes < 2 {
        warnings.push(format!("training labels contain {n_classes} class(es)"));
    }

    let (train_idx, val_idx) = split(set.len(), opts.val_fraction, opts.seed);
    let adam = AdamConfig { lr: opts.lr, ..AdamConfig::default() };
    let select_loss = |m: &StcaModel| -> Result<(f64, Option<f64>)> {
        let t = mean_loss(m, set, &train_idx)?;
        let v = if val_idx.is_empty() { None } else { Some(mean_loss(m, set, &val_idx)?) };
        Ok((t, v))
    };
    let (t0, v0) = select_loss(model)?;
    let mut train_curve = vec![t0];
    let mut val_curve: Vec<f64> = v0.into_iter().collect();
    let mut best = (v0.unwrap_or(t0), 0usize, model.params.clone());
    let mut order = train_idx.clone();
    let mut shuffler = rng::rng_for(opts.seed, "stca/shuffle");
    let mut since_best = 0;
    for epoch in 1..=opts.epochs {
        order.shuffle(&mut shuffler);
        for (b, batch) in order.chunks(opts.batch_size).enumerate() {
            let mut grads = Gradients::new(model.params.len());
            let mut valid = 0usize;
            for (k, &i) in batch.iter().enumerate() {
                let drop_seed = rng::indexed(opts.seed, &format!("stca/dropout/{epoch}/{b}"), k as u64);
                let mut tape = Tape::with_dropout(&model.params, Dropout::new(DropoutMode::Train, drop_seed));
                let logits = model.forward(&mut tape, &set.patches[i], set.nodata)?;
                let (loss, n) = tape.cross_entropy(logits, &labels[i])?;
                if !tape.value(loss).all_finite() {
                    return Err(Error::Diverged(format!("non-finite loss in epoch {epoch}")));
                }
                grads.merge(&tape.backward(loss, 1.0)?.params);
                valid += n;
            }
            if valid == 0 {
                continue;
            }
            grads.scale(1.0 / valid as f32);
            model.params.adam_step(&grads, &adam)?;
        }
        let (t, v) = select_loss(model)?;
        if !t.is_finite() || v.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Diverged(format!("non-finite loss after epoch {epoch}")));
        }
        train_curve.push(t);
        val_curve.extend(v);
        let score = v.unwrap_or(t);
        if score < best.0 {
            best = (score, epoch, model.params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= opts.patience {
                break;
            }
        }
    }
    model.params = best.2;
    Ok(TrainReport { train_curve, val_curve, best_epoch: best.1, warnings })
}
