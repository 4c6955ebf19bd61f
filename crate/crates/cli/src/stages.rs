//! One function per pipeline command.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use treecrop_core::castc::{
    density_score, kmeans_init, label_clusters, refine, Autoencoder, AutoencoderConfig, ClusterModel, DensityLabel,
    EncoderEmbedder, LabelSource, PatchGrid, PretrainOptions, RefineOptions, UncountedPolicy,
};
use treecrop_core::evaluation::{
    confusion, draw_design, f1_score, pairwise_separability, strata_map, stratified_estimates, temporal_consistency,
    DesignParams, SamplePoint, Stratum, NUM_STRATA,
};
use treecrop_core::postprocess::{apply_external_mask, assemble_classmap, temporal_persistence, uncertainty_filter, GrowThresholds};
use treecrop_core::raster::{
    compute_normalization_with, erode_labels, extract_labels, extract_patch, normalize, read_label_mask, read_stack,
    synth_scene, synth_series, tile_patches, write_label_mask, write_stack, Connectivity, ErodeParams, LabelMask,
    PatchSet, RasterStack, SceneConfig, DENSITY_HIGH, DENSITY_LOW, NODATA_CODE, NUM_CLASSES,
};
use treecrop_core::rng;
use treecrop_core::stca::{infer_scene, train, Mode, ProbabilityField, StcaConfig, StcaModel, TrainOptions};
use treecrop_core::Error as CoreError;

use crate::error::{io_error, CliError};
use crate::workspace::{ensure_parent, read_json, require, sidecar, stem, Ctx};

type Res<T> = Result<T, CliError>;

fn scene_config(ctx: &Ctx) -> Res<SceneConfig> {
    let c = &ctx.cfg;
    let mixture: Vec<f64> = c.list("synth.mixture")?;
    let mixture: [f64; 4] = mixture
        .try_into()
        .map_err(|_| CliError::Config("synth.mixture needs four shares".into()))?;
    Ok(SceneConfig {
        height: c.get("synth.height")?,
        width: c.get("synth.width")?,
        mixture,
        field_size: c.get("synth.field_size")?,
        noise: c.get("synth.noise")?,
        high_density_fraction: c.get("synth.high_density_fraction")?,
        expansion_rate: c.get("synth.expansion_rate")?,
        swap_rate: c.get("synth.swap_rate")?,
        ..SceneConfig::default()
    })
}

fn synth_paths(ctx: &Ctx, prefix: &str, count_key: &str, kind: &str) -> Vec<PathBuf> {
    let n: usize = ctx.cfg.get(count_key).unwrap_or(0);
    (0..n).map(|i| ctx.path(&format!("synth/{prefix}_{i}.{kind}.rstk"))).collect()
}

pub fn train_stacks(ctx: &Ctx) -> Vec<PathBuf> {
    ctx.inputs("paths.train_stacks", |c| synth_paths(c, "train", "synth.train_scenes", "stack"))
}
pub fn train_labels(ctx: &Ctx) -> Vec<PathBuf> {
    ctx.inputs("paths.train_labels", |c| synth_paths(c, "train", "synth.train_scenes", "labels"))
}
pub fn map_stacks(ctx: &Ctx) -> Vec<PathBuf> {
    ctx.inputs("paths.map_stacks", |c| synth_paths(c, "year", "synth.years", "stack"))
}
pub fn density_stacks(ctx: &Ctx) -> Vec<PathBuf> {
    ctx.inputs("paths.density_stacks", |c| synth_paths(c, "density", "synth.density_scenes", "stack"))
}
fn density_truth(ctx: &Ctx) -> Vec<PathBuf> {
    ctx.inputs("paths.density_truth", |c| synth_paths(c, "density", "synth.density_scenes", "density"))
}
fn reference_path(ctx: &Ctx) -> Option<PathBuf> {
    ctx.cfg.path("paths.reference").or_else(|| synth_paths(ctx, "year", "synth.years", "labels").pop())
}
fn map_density_truth(ctx: &Ctx) -> Option<PathBuf> {
    ctx.cfg.path("paths.map_density_truth").or_else(|| synth_paths(ctx, "year", "synth.years", "density").pop())
}

pub fn normalized(ctx: &Ctx, input: &Path) -> PathBuf {
    ctx.path(&format!("norm/{}.rstk", stem(input)))
}
fn prob_path(ctx: &Ctx, input: &Path) -> PathBuf {
    ctx.path(&format!("infer/{}.prob.rstk", stem(input)))
}
pub fn classmap_path(ctx: &Ctx, input: &Path) -> PathBuf {
    ctx.path(&format!("grow/{}.classmap.rstk", stem(input)))
}

fn write_stack_prov(ctx: &Ctx, out: &Path, stack: &RasterStack, cmd: &str, inputs: &[PathBuf], extra: Value) -> Res<()> {
    ensure_parent(out)?;
    write_stack(out, stack)?;
    ctx.provenance(out, cmd, inputs, extra)
}

fn write_mask_prov(ctx: &Ctx, out: &Path, mask: &LabelMask, cmd: &str, inputs: &[PathBuf], extra: Value) -> Res<()> {
    ensure_parent(out)?;
    write_label_mask(out, mask)?;
    ctx.provenance(out, cmd, inputs, extra)
}

pub fn cmd_synth(ctx: &Ctx) -> Res<()> {
    let cmd = "synth";
    let base = scene_config(ctx)?;
    let seed = ctx.stage_seed("synth");
    let params = |i: usize| json!({ "scene": i });
    let n_train: usize = ctx.cfg.get("synth.train_scenes")?;
    for i in 0..n_train {
        let s = synth_scene(&base, rng::indexed(seed, "train", i as u64))?;
        write_stack_prov(ctx, &ctx.path(&format!("synth/train_{i}.stack.rstk")), &s.stack, cmd, &[], params(i))?;
        write_mask_prov(ctx, &ctx.path(&format!("synth/train_{i}.labels.rstk")), &s.labels, cmd, &[], params(i))?;
    }
    let years: usize = ctx.cfg.get("synth.years")?;
    let series = synth_series(&base, years, rng::substream(seed, "series"))?;
    for (y, s) in series.iter().enumerate() {
        let p = json!({ "year": y });
        write_stack_prov(ctx, &ctx.path(&format!("synth/year_{y}.stack.rstk")), &s.stack, cmd, &[], p.clone())?;
        write_mask_prov(ctx, &ctx.path(&format!("synth/year_{y}.labels.rstk")), &s.labels, cmd, &[], p.clone())?;
        write_mask_prov(ctx, &ctx.path(&format!("synth/year_{y}.density.rstk")), &s.density_truth, cmd, &[], p)?;
    }
    // Plantation-only scenes with two planting densities for the
    // density-grading stage.
    let dense = SceneConfig { mixture: [0.0, 1.0, 0.0, 0.0], field_size: ctx.cfg.get("synth.density_field_size")?, ..base };
    let n_dense: usize = ctx.cfg.get("synth.density_scenes")?;
    for i in 0..n_dense {
        let s = synth_scene(&dense, rng::indexed(seed, "density", i as u64))?;
        write_stack_prov(ctx, &ctx.path(&format!("synth/density_{i}.stack.rstk")), &s.stack, cmd, &[], params(i))?;
        write_mask_prov(ctx, &ctx.path(&format!("synth/density_{i}.labels.rstk")), &s.labels, cmd, &[], params(i))?;
        write_mask_prov(ctx, &ctx.path(&format!("synth/density_{i}.density.rstk")), &s.density_truth, cmd, &[], params(i))?;
    }
    Ok(())
}

pub fn cmd_normalize(ctx: &Ctx) -> Res<()> {
    let lo: f64 = ctx.cfg.get("normalize.percentile_lo")?;
    let hi: f64 = ctx.cfg.get("normalize.percentile_hi")?;
    let mut inputs = train_stacks(ctx);
    inputs.extend(map_stacks(ctx));
    inputs.extend(density_stacks(ctx));
    require(&inputs)?;
    let mut seen = BTreeMap::new();
    for p in &inputs {
        if let Some(prev) = seen.insert(stem(p), p.clone()) {
            return Err(CliError::Config(format!("inputs {} and {} share a name", prev.display(), p.display())));
        }
    }
    for p in &inputs {
        let stack = read_stack(p)?;
        let params = compute_normalization_with(&stack, &stem(p), lo, hi)?;
        let out = normalized(ctx, p);
        let norm = normalize(&stack, &params)?;
        write_stack_prov(ctx, &out, &norm, "normalize", std::slice::from_ref(p), serde_json::to_value(&params).expect("params serialize"))?;
        let params_path = out.with_extension("norm.json");
        ctx.write_json(&params_path, &params, "normalize", std::slice::from_ref(p))?;
    }
    Ok(())
}

fn stca_config(ctx: &Ctx, stack: &RasterStack) -> Res<StcaConfig> {
    let c = &ctx.cfg;
    let mode: Mode = c.get("stca.mode")?;
    Ok(StcaConfig {
        mode,
        depth: c.get("stca.depth")?,
        base_channels: c.get("stca.base_channels")?,
        timesteps: stack.timesteps(),
        bands: stack.bands(),
        classes: NUM_CLASSES,
        patch_size: c.get("stca.patch_size")?,
        dropout: c.get("stca.dropout")?,
        mc_runs: c.get("stca.runs")?,
        lstm_hidden: c.get("stca.lstm_hidden")?,
        attention_dim: c.get("stca.attention_dim")?,
    })
}

#[derive(Serialize)]
struct StcaReport {
    model_id: String,
    patches: usize,
    train_curve: Vec<f64>,
    val_curve: Vec<f64>,
    best_epoch: usize,
    warnings: Vec<String>,
}

pub fn cmd_train_stca(ctx: &Ctx) -> Res<()> {
    let cmd = "train-stca";
    let raw = train_stacks(ctx);
    let stacks: Vec<PathBuf> = raw.iter().map(|p| normalized(ctx, p)).collect();
    let labels = train_labels(ctx);
    if stacks.len() != labels.len() {
        return Err(CliError::Config(format!("{} training stacks but {} label masks", stacks.len(), labels.len())));
    }
    if stacks.is_empty() {
        return Err(CliError::Config("no training stacks".into()));
    }
    require(&stacks)?;
    require(&labels)?;
    let c = &ctx.cfg;
    let size: usize = c.get("stca.patch_size")?;
    let erode: bool = c.get("stca.erode")?;
    let erode_params = ErodeParams { radius: c.get("stca.erode_radius")?, min_component: c.get("stca.min_component")? };
    let mut sets = Vec::new();
    let mut first = None;
    for (s, l) in stacks.iter().zip(&labels) {
        let stack = read_stack(s)?;
        let mut mask = read_label_mask(l)?;
        if erode {
            mask = erode_labels(&mask, erode_params);
        }
        sets.push(tile_patches(&stack, Some(&mask), size, size)?);
        first.get_or_insert(stack);
    }
    let set = PatchSet::concat(&sets)?;
    let config = stca_config(ctx, first.as_ref().expect("at least one stack"))?;
    let mut model = StcaModel::build(config, ctx.stage_seed("stca/init"))?;
    let opts = TrainOptions {
        epochs: c.get("stca.epochs")?,
        lr: c.get("stca.lr")?,
        batch_size: c.get("stca.batch_size")?,
        val_fraction: c.get("stca.val_fraction")?,
        patience: c.get("stca.patience")?,
        seed: ctx.stage_seed("stca/train"),
    };
    let rep = train(&mut model, &set, &opts)?;
    let mut inputs = stacks.clone();
    inputs.extend(labels);
    let ckpt = ctx.path("stca/model.ckpt");
    ensure_parent(&ckpt)?;
    model.save(&ckpt)?;
    ctx.provenance(&ckpt, cmd, &inputs, json!({ "model_id": model.id() }))?;
    ctx.write_curve(&ctx.path("stca/train_curve.csv"), &rep.train_curve, cmd, &inputs)?;
    ctx.write_curve(&ctx.path("stca/val_curve.csv"), &rep.val_curve, cmd, &inputs)?;
    let report = StcaReport {
        model_id: model.id(),
        patches: set.len(),
        train_curve: rep.train_curve,
        val_curve: rep.val_curve,
        best_epoch: rep.best_epoch,
        warnings: rep.warnings,
    };
    ctx.write_json(&ctx.path("stca/report.json"), &report, cmd, &inputs)
}

pub fn cmd_infer(ctx: &Ctx) -> Res<()> {
    let ckpt = ctx.path("stca/model.ckpt");
    require(std::slice::from_ref(&ckpt))?;
    let mut model = StcaModel::load(&ckpt)?;
    // Dropout can be overridden at inference without retraining.
    model.config.dropout = ctx.cfg.get("stca.dropout")?;
    let runs: usize = ctx.cfg.get("stca.runs")?;
    let stride: usize = ctx.cfg.get("stca.stride")?;
    let seed = ctx.stage_seed("infer");
    for (y, raw) in map_stacks(ctx).iter().enumerate() {
        let input = normalized(ctx, raw);
        require(std::slice::from_ref(&input))?;
        let stack = read_stack(&input)?;
        let field = infer_scene(&model, &stack, runs, rng::indexed(seed, "year", y as u64), stride)?;
        let extra = json!({ "model_id": field.model_id, "runs": field.runs, "seed": field.seed, "dropout": model.config.dropout });
        write_stack_prov(ctx, &prob_path(ctx, raw), &field.to_stack()?, "infer", &[input, ckpt.clone()], extra)?;
    }
    Ok(())
}

pub fn grow_thresholds(ctx: &Ctx) -> Res<GrowThresholds> {
    let n: u32 = ctx.cfg.get("grow.connectivity")?;
    let connectivity = Connectivity::from_count(n)
        .ok_or_else(|| CliError::Config(format!("grow.connectivity must be 4 or 8, got {n}")))?;
    let t = GrowThresholds {
        seed_threshold: ctx.cfg.get("grow.seed_threshold")?,
        neighbor_low: ctx.cfg.get("grow.neighbor_low")?,
        connectivity,
    };
    t.validate()?;
    Ok(t)
}

pub fn cmd_grow(ctx: &Ctx) -> Res<()> {
    let t = grow_thresholds(ctx)?;
    let raws = map_stacks(ctx);
    let probs: Vec<PathBuf> = raws.iter().map(|p| prob_path(ctx, p)).collect();
    require(&probs)?;
    let builtup = ctx.cfg.path("paths.builtup_mask");
    let builtup_mask = builtup.as_deref().map(read_label_mask).transpose()?;
    let unc_threshold: Option<f32> = ctx.cfg.optional("grow.uncertainty_threshold")?;
    let mut maps = Vec::new();
    let mut fields = Vec::new();
    for p in &probs {
        let mut field = ProbabilityField::from_stack(&read_stack(p)?)?;
        // The raster carries no model metadata; take it from the sidecar.
        let side = sidecar(p);
        if side.exists() {
            let d = &read_json(&side)?["details"];
            field.model_id = d["model_id"].as_str().unwrap_or_default().to_string();
            field.runs = d["runs"].as_u64().unwrap_or(0) as usize;
            field.seed = d["seed"].as_u64().unwrap_or(0);
        }
        let mut map = assemble_classmap(&field, &t)?;
        if let Some(m) = &builtup_mask {
            map = apply_external_mask(&map, m)?;
        }
        maps.push(map);
        fields.push(field);
    }
    if maps.len() >= 2 && ctx.cfg.get::<bool>("grow.persistence")? {
        maps = temporal_persistence(&maps)?;
    }
    if let Some(th) = unc_threshold {
        maps = maps.iter().zip(&fields).map(|(m, f)| uncertainty_filter(m, &f.unc, th)).collect::<Result<_, _>>()?;
    }
    for ((raw, p), map) in raws.iter().zip(&probs).zip(&maps) {
        let mut inputs = vec![p.clone()];
        inputs.extend(builtup.clone());
        let extra = json!({ "operations": map.provenance() });
        write_mask_prov(ctx, &classmap_path(ctx, raw), &map.mask, "grow", &inputs, extra)?;
    }
    Ok(())
}

fn ae_config(ctx: &Ctx, stack: &RasterStack) -> Res<AutoencoderConfig> {
    let c = &ctx.cfg;
    Ok(AutoencoderConfig {
        depth: c.get("castc.depth")?,
        base_channels: c.get("castc.base_channels")?,
        timesteps: stack.timesteps(),
        bands: stack.bands(),
        patch_size: c.get("castc.patch_size")?,
        embed_dim: c.get("castc.embed_dim")?,
        lstm_hidden: c.get("castc.lstm_hidden")?,
        attention_dim: c.get("castc.attention_dim")?,
        decoder_hidden: c.get("castc.decoder_hidden")?,
    })
}

/// Majority density of the plantation pixels in a patch; ties go to low.
pub fn patch_density(truth: &[u8]) -> Option<DensityLabel> {
    let hi = truth.iter().filter(|&&t| t == DENSITY_HIGH).count();
    let lo = truth.iter().filter(|&&t| t == DENSITY_LOW).count();
    (hi + lo > 0).then_some(if hi > lo { DensityLabel::High } else { DensityLabel::Low })
}

/// Explicit cluster labels: one `cluster = high|low` line each.
fn read_cluster_labels(path: &Path) -> Res<BTreeMap<usize, DensityLabel>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut out = BTreeMap::new();
    for line in text.lines().map(|l| l.split('#').next().unwrap_or("").trim()).filter(|l| !l.is_empty()) {
        let bad = || CliError::Input(format!("{}: bad cluster label line {line:?}", path.display()));
        let (c, l) = line.split_once('=').ok_or_else(bad)?;
        let c: usize = c.trim().parse().map_err(|_| bad())?;
        let l: DensityLabel = l.trim().parse().map_err(|_| bad())?;
        out.insert(c, l);
    }
    Ok(out)
}

#[derive(Serialize)]
struct CastcReport {
    autoencoder_id: String,
    patches: usize,
    pretrain_curve: Vec<f64>,
    pretrain_best_epoch: usize,
    kl_curve: Vec<f64>,
    cluster_sizes: Vec<usize>,
    cluster_labels: Vec<Option<DensityLabel>>,
    /// Share of training patches whose cluster label matches their truth.
    purity: Option<f64>,
    separability: Vec<(usize, usize, f64)>,
    mean_separability: Option<f64>,
}

pub fn cmd_train_castc(ctx: &Ctx) -> Res<()> {
    let cmd = "train-castc";
    let raws = density_stacks(ctx);
    if raws.is_empty() {
        return Err(CliError::Config("no density stacks".into()));
    }
    let stacks: Vec<PathBuf> = raws.iter().map(|p| normalized(ctx, p)).collect();
    require(&stacks)?;
    let explicit = ctx.cfg.path("paths.cluster_labels");
    let truths = density_truth(ctx);
    let use_truth = explicit.is_none();
    if use_truth {
        if truths.len() != stacks.len() {
            return Err(CliError::Config("need one density truth mask per density stack or paths.cluster_labels".into()));
        }
        require(&truths)?;
    }
    let c = &ctx.cfg;
    let size: usize = c.get("castc.patch_size")?;
    let min_plantation: f64 = c.get("castc.min_plantation")?;
    let mut sets = Vec::new();
    let mut truth = Vec::new();
    let mut first = None;
    for (i, s) in stacks.iter().enumerate() {
        let stack = read_stack(s)?;
        let set = tile_patches(&stack, None, size, size)?;
        let keep: Vec<usize> = if use_truth {
            let t = read_label_mask(&truths[i])?;
            let mut keep = Vec::new();
            for (j, &(r, col)) in set.origins.iter().enumerate() {
                let patch = extract_labels(&t, r, col, size);
                let planted = patch.iter().filter(|&&v| v != NODATA_CODE).count();
                if planted as f64 >= min_plantation * (size * size) as f64 {
                    keep.push(j);
                    truth.push(patch_density(&patch).expect("planted patch"));
                }
            }
            keep
        } else {
            (0..set.len()).collect()
        };
        sets.push(set.select(&keep));
        first.get_or_insert(stack);
    }
    let set = PatchSet::concat(&sets)?;
    let mut ae = Autoencoder::build(ae_config(ctx, first.as_ref().expect("one stack"))?, ctx.stage_seed("castc/init"))?;
    let pre = ae.pretrain(
        &set,
        &PretrainOptions {
            epochs: c.get("castc.pretrain_epochs")?,
            lr: c.get("castc.pretrain_lr")?,
            batch_size: c.get("castc.batch_size")?,
            seed: ctx.stage_seed("castc/pretrain"),
        },
    )?;
    let k: usize = c.get("castc.k")?;
    let alpha: f64 = c.get("castc.alpha")?;
    let z0 = ae.embed(&set)?;
    let init = kmeans_init(&z0, k, ctx.stage_seed("castc/kmeans"))?;
    let refine_opts = RefineOptions {
        epochs: c.get("castc.refine_epochs")?,
        lr: c.get("castc.refine_lr")?,
        batch_size: c.get("castc.batch_size")?,
        alpha,
        seed: ctx.stage_seed("castc/refine"),
    };
    let refined = refine(&mut EncoderEmbedder { model: &mut ae, patches: &set }, &init, &refine_opts)?;
    let z = ae.embed(&set)?;
    let model = ClusterModel::new(refined.centroids.clone(), z.dim, alpha)?;
    let assign = model.assign(&z);
    let labeled = match &explicit {
        Some(p) => label_clusters(&model, LabelSource::Explicit(&read_cluster_labels(p)?))?,
        None => label_clusters(&model, LabelSource::TruthMajority { assignments: &assign, truth: &truth })?,
    };
    let purity = use_truth.then(|| {
        let hits = assign.iter().zip(&truth).filter(|(a, t)| labeled.labels[**a] == Some(**t)).count();
        hits as f64 / truth.len() as f64
    });
    let separability = pairwise_separability(&z, &assign, k)?;
    let mean_separability =
        (!separability.is_empty()).then(|| separability.iter().map(|s| s.2).sum::<f64>() / separability.len() as f64);
    let mut sizes = vec![0usize; k];
    assign.iter().for_each(|&a| sizes[a] += 1);

    let mut inputs = stacks.clone();
    if use_truth {
        inputs.extend(truths);
    } else {
        inputs.extend(explicit);
    }
    let ckpt = ctx.path("castc/autoencoder.ckpt");
    ensure_parent(&ckpt)?;
    ae.save(&ckpt)?;
    ctx.provenance(&ckpt, cmd, &inputs, json!({ "model_id": ae.id() }))?;
    let clusters = ctx.path("castc/clusters.tccl");
    labeled.save(&clusters)?;
    ctx.provenance(&clusters, cmd, &inputs, Value::Null)?;
    ctx.write_curve(&ctx.path("castc/pretrain_curve.csv"), &pre.loss_curve, cmd, &inputs)?;
    ctx.write_curve(&ctx.path("castc/kl_curve.csv"), &refined.kl_curve, cmd, &inputs)?;
    let report = CastcReport {
        autoencoder_id: ae.id(),
        patches: set.len(),
        pretrain_curve: pre.loss_curve,
        pretrain_best_epoch: pre.best_epoch,
        kl_curve: refined.kl_curve,
        cluster_sizes: sizes,
        cluster_labels: labeled.labels.clone(),
        purity,
        separability,
        mean_separability,
    };
    ctx.write_json(&ctx.path("castc/report.json"), &report, cmd, &inputs)
}

#[derive(Serialize)]
struct ComponentReport {
    pixels: usize,
    n_high: u64,
    n_all: u64,
    score: String,
    label: DensityLabel,
    truth: Option<DensityLabel>,
}

#[derive(Serialize)]
struct DensityReport {
    components: Vec<ComponentReport>,
    dropped_components: usize,
    /// Share of scored plantations whose label matches their truth.
    agreement: Option<f64>,
}

pub fn cmd_density(ctx: &Ctx) -> Res<()> {
    let cmd = "density";
    let raw = map_stacks(ctx).pop().ok_or_else(|| CliError::Config("no map stacks".into()))?;
    let stack_path = normalized(ctx, &raw);
    let map_path = classmap_path(ctx, &raw);
    let ckpt = ctx.path("castc/autoencoder.ckpt");
    let clusters = ctx.path("castc/clusters.tccl");
    let mut inputs = vec![stack_path.clone(), map_path.clone(), ckpt.clone(), clusters.clone()];
    require(&inputs)?;
    let stack = read_stack(&stack_path)?;
    let map = read_label_mask(&map_path)?;
    let ae = Autoencoder::load(&ckpt)?;
    let model = ClusterModel::load(&clusters)?;
    let size = ae.config.patch_size;
    let (h, w) = (stack.height(), stack.width());
    if size > h || size > w {
        return Err(CliError::Input(format!("map {h}x{w} is smaller than one {size}-pixel patch")));
    }
    let mut grid = PatchGrid::for_extent(h, w, size);
    // Edge cells are embedded from the last full patch that covers them.
    let cells: Vec<(usize, usize)> = (0..grid.rows)
        .flat_map(|r| (0..grid.cols).map(move |c| (r, c)))
        .map(|(r, c)| ((r * size).min(h - size), (c * size).min(w - size)))
        .collect();
    let set = PatchSet {
        size,
        stride: size,
        timesteps: stack.timesteps(),
        bands: stack.bands(),
        nodata: stack.nodata,
        origins: cells.clone(),
        patches: cells.iter().map(|&(r, c)| extract_patch(&stack, r, c, size)).collect(),
        labels: None,
    };
    let assign = model.assign(&ae.embed(&set)?);
    grid.clusters = assign.into_iter().map(Some).collect();
    let policy = match ctx.cfg.raw("density.uncounted") {
        "error" => UncountedPolicy::Error,
        "drop" => UncountedPolicy::Drop,
        other => return Err(CliError::Config(format!("density.uncounted must be error or drop, got {other:?}"))),
    };
    let scores = density_score(&map, &grid, &model, policy)?;
    let truth_path = map_density_truth(ctx).filter(|p| p.exists());
    let truth = truth_path.as_deref().map(read_label_mask).transpose()?;
    let mut comp_truth: Vec<Vec<u8>> = vec![Vec::new(); scores.components.len()];
    if let Some(t) = &truth {
        for (i, c) in scores.component_of.iter().enumerate() {
            if let Some(c) = c {
                comp_truth[*c].push(t.codes()[i]);
            }
        }
    }
    let components: Vec<ComponentReport> = scores
        .components
        .iter()
        .zip(&comp_truth)
        .map(|(s, t)| ComponentReport {
            pixels: s.pixels,
            n_high: s.n_high,
            n_all: s.n_all,
            score: format!("{}/{}", s.n_high, s.n_all),
            label: s.label,
            truth: patch_density(t),
        })
        .collect();
    let judged: Vec<&ComponentReport> = components.iter().filter(|c| c.truth.is_some()).collect();
    let agreement = (!judged.is_empty())
        .then(|| judged.iter().filter(|c| c.truth == Some(c.label)).count() as f64 / judged.len() as f64);
    inputs.extend(truth_path);
    write_stack_prov(ctx, &ctx.path("density/score.rstk"), &scores.score_stack()?, cmd, &inputs, Value::Null)?;
    write_mask_prov(ctx, &ctx.path("density/class.rstk"), &scores.class_mask()?, cmd, &inputs, Value::Null)?;
    let report = DensityReport { components, dropped_components: scores.dropped_components, agreement };
    ctx.write_json(&ctx.path("density/report.json"), &report, cmd, &inputs)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SampleRow {
    pub point_id: usize,
    pub row: usize,
    pub col: usize,
    pub stratum: String,
    pub reference: u8,
    pub predicted: u8,
}

#[derive(Serialize, Deserialize)]
struct DesignFile {
    design: treecrop_core::evaluation::StratifiedDesign,
    /// Mapped pixels per stratum over the whole map.
    stratum_areas: [u64; NUM_STRATA],
}

fn class_maps(ctx: &Ctx) -> Res<(Vec<PathBuf>, Vec<LabelMask>)> {
    let paths: Vec<PathBuf> = map_stacks(ctx).iter().map(|p| classmap_path(ctx, p)).collect();
    require(&paths)?;
    let maps = paths.iter().map(read_label_mask).collect::<Result<_, _>>()?;
    Ok((paths, maps))
}

pub fn cmd_sample(ctx: &Ctx) -> Res<()> {
    let cmd = "sample";
    let (mut inputs, maps) = class_maps(ctx)?;
    let reference = reference_path(ctx).ok_or_else(|| CliError::Config("paths.reference is not set".into()))?;
    require(std::slice::from_ref(&reference))?;
    let truth = read_label_mask(&reference)?;
    let last = maps.last().expect("maps exist");
    if !truth.same_extent(last) {
        return Err(CliError::Input("reference and maps differ in extent".into()));
    }
    let allocation: Vec<usize> = ctx.cfg.list("sample.allocation")?;
    let allocation: [usize; NUM_STRATA] = allocation
        .try_into()
        .map_err(|_| CliError::Config(format!("sample.allocation needs {NUM_STRATA} counts")))?;
    let params = DesignParams {
        cluster_size: ctx.cfg.get("sample.cluster_size")?,
        n_clusters: ctx.cfg.get("sample.n_clusters")?,
        allocation,
    };
    let (design, points) = draw_design(&maps, &params, ctx.stage_seed("sample"))?;
    let mut stratum_areas = [0u64; NUM_STRATA];
    for s in strata_map(&maps)?.into_iter().flatten() {
        stratum_areas[s.index()] += 1;
    }
    inputs.push(reference);
    let csv_path = ctx.path("sample/points.csv");
    ensure_parent(&csv_path)?;
    write_points(&csv_path, &points, &truth, last)?;
    ctx.provenance(&csv_path, cmd, &inputs, Value::Null)?;
    ctx.write_json(&ctx.path("sample/design.json"), &DesignFile { design, stratum_areas }, cmd, &inputs)
}

fn write_points(path: &Path, points: &[SamplePoint], truth: &LabelMask, map: &LabelMask) -> Res<()> {
    let err = |e: csv::Error| CliError::Input(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for p in points {
        w.serialize(SampleRow {
            point_id: p.point_id,
            row: p.row,
            col: p.col,
            stratum: p.stratum.name().to_string(),
            reference: truth.get(p.row, p.col),
            predicted: map.get(p.row, p.col),
        })
        .map_err(err)?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

pub fn read_points(path: &Path) -> Res<Vec<SampleRow>> {
    let err = |e: csv::Error| CliError::Input(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    r.deserialize().map(|row| row.map_err(err)).collect()
}

#[derive(Serialize)]
struct EvaluationReport {
    points: usize,
    /// Points dropped because their reference label is nodata.
    skipped: usize,
    /// Pooled counts, `[predicted][reference]`.
    confusion: Vec<Vec<u64>>,
    estimates: treecrop_core::evaluation::AreaEstimate,
    /// `None` for classes absent from the sample.
    f1: Vec<Option<f64>>,
    temporal_consistency: Option<f64>,
}

pub fn cmd_evaluate(ctx: &Ctx) -> Res<()> {
    let cmd = "evaluate";
    let csv_path = ctx.path("sample/points.csv");
    let design_path = ctx.path("sample/design.json");
    require(&[csv_path.clone(), design_path.clone()])?;
    let rows = read_points(&csv_path)?;
    let design: DesignFile = serde_json::from_value(read_json(&design_path)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", design_path.display())))?;
    let (map_paths, maps) = class_maps(ctx)?;
    let mut reference = Vec::new();
    let mut predicted = Vec::new();
    let mut strata = Vec::new();
    let mut skipped = 0;
    for r in &rows {
        let s = Stratum::from_name(&r.stratum)
            .ok_or_else(|| CliError::Input(format!("{}: unknown stratum {}", csv_path.display(), r.stratum)))?;
        if r.reference == NODATA_CODE {
            skipped += 1;
            continue;
        }
        reference.push(r.reference);
        predicted.push(r.predicted);
        strata.push(s.index());
    }
    let m = confusion(&reference, &predicted, &strata, NUM_STRATA, NUM_CLASSES)?;
    let estimates = stratified_estimates(&m, &design.stratum_areas)?;
    let f1 = (0..NUM_CLASSES)
        .map(|c| match f1_score(&m, c) {
            Ok(v) => Ok(Some(v)),
            Err(CoreError::EmptyClass { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_, _>>()?;
    let pts: Vec<(usize, usize)> = rows.iter().map(|r| (r.row, r.col)).collect();
    let temporal = match temporal_consistency(&maps, &pts) {
        Ok(v) => Some(v),
        Err(CoreError::InsufficientData(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let report = EvaluationReport {
        points: rows.len(),
        skipped,
        confusion: m.pooled(),
        estimates,
        f1,
        temporal_consistency: temporal,
    };
    let mut inputs = vec![csv_path, design_path];
    inputs.extend(map_paths);
    ctx.write_json(&ctx.path("evaluate/report.json"), &report, cmd, &inputs)
}

pub const REPORTS: [(&str, &str); 4] = [
    ("stca", "stca/report.json"),
    ("castc", "castc/report.json"),
    ("density", "density/report.json"),
    ("evaluate", "evaluate/report.json"),
];

pub fn cmd_report(ctx: &Ctx) -> Res<()> {
    let mut summary = serde_json::Map::new();
    let mut inputs = Vec::new();
    for (name, rel) in REPORTS {
        let p = ctx.path(rel);
        if p.exists() {
            summary.insert(name.to_string(), read_json(&p)?);
            inputs.push(p);
        }
    }
    if summary.is_empty() {
        return Err(CliError::Input(format!("no stage reports under {}", ctx.out.display())));
    }
    ctx.write_json(&ctx.path("report/summary.json"), &Value::Object(summary), "report", &inputs)
}

/// Every stage in order. Synthetic scenes are generated only when some
/// input is not configured.
pub fn cmd_pipeline(ctx: &Ctx) -> Res<()> {
    let needs_synth = ["paths.train_stacks", "paths.map_stacks", "paths.density_stacks"]
        .iter()
        .any(|k| ctx.cfg.paths(k).is_empty());
    if needs_synth {
        cmd_synth(ctx)?;
    }
    let stages: [fn(&Ctx) -> Res<()>; 9] = [
        cmd_normalize,
        cmd_train_stca,
        cmd_infer,
        cmd_grow,
        cmd_train_castc,
        cmd_density,
        cmd_sample,
        cmd_evaluate,
        cmd_report,
    ];
    stages.iter().try_for_each(|f| f(ctx))
}
