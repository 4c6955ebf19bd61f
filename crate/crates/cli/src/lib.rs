//! The `treecrop` command-line pipeline: configuration, output layout
//! and one entry point per stage.

pub mod config;
pub mod error;
pub mod stages;
pub mod workspace;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::Config;
pub use error::CliError;
pub use workspace::Ctx;

#[derive(Debug, Parser)]
#[command(name = "treecrop", version, about = "Tree-crop mapping, density grading and area estimation")]
pub struct Cli {
    /// Configuration file (`key = value` lines with `[section]` headers).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Any config key as `section.key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Default, Args)]
pub struct StcaFlags {
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f32>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
}

#[derive(Debug, Default, Args)]
pub struct GrowFlags {
    #[arg(long)]
    pub seed_threshold: Option<f32>,
    #[arg(long)]
    pub neighbor_low: Option<f32>,
    #[arg(long)]
    pub connectivity: Option<u32>,
}

#[derive(Debug, Default, Args)]
pub struct CastcFlags {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic training, map and density scenes.
    Synth,
    /// Percentile-normalize every input stack.
    Normalize,
    /// Train the segmentation network.
    TrainStca(StcaFlags),
    /// Monte Carlo dropout inference over the map stacks.
    Infer(StcaFlags),
    /// Region growing and class-map assembly.
    Grow(GrowFlags),
    /// Pretrain the autoencoder and refine density clusters.
    TrainCastc(CastcFlags),
    /// Score plantation density on the latest class map.
    Density,
    /// Draw the stratified sample.
    Sample,
    /// Accuracy and area estimates from the labeled sample.
    Evaluate,
    /// Collect stage reports into one summary.
    Report,
    /// Run every stage in order.
    Pipeline,
}

fn flag<T: ToString>(cfg: &mut Config, key: &str, v: &Option<T>) -> Result<(), CliError> {
    match v {
        Some(v) => cfg.set(key, &v.to_string()),
        None => Ok(()),
    }
}

fn apply_stca(cfg: &mut Config, f: &StcaFlags) -> Result<(), CliError> {
    flag(cfg, "stca.mode", &f.mode)?;
    flag(cfg, "stca.runs", &f.runs)?;
    flag(cfg, "stca.dropout", &f.dropout)?;
    flag(cfg, "stca.epochs", &f.epochs)?;
    flag(cfg, "stca.lr", &f.lr)
}

/// Config after file, flags and overrides are applied.
pub fn resolve_config(cli: &Cli) -> Result<Config, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    flag(&mut cfg, "general.seed", &cli.seed)?;
    if let Some(out) = &cli.out {
        // Relative to the working directory, not the config file.
        let abs = std::env::current_dir().map(|d| d.join(out)).unwrap_or_else(|_| out.clone());
        cfg.set("general.out", &abs.to_string_lossy())?;
    }
    match &cli.command {
        Command::TrainStca(f) | Command::Infer(f) => apply_stca(&mut cfg, f)?,
        Command::Grow(f) => {
            flag(&mut cfg, "grow.seed_threshold", &f.seed_threshold)?;
            flag(&mut cfg, "grow.neighbor_low", &f.neighbor_low)?;
            flag(&mut cfg, "grow.connectivity", &f.connectivity)?;
        }
        Command::TrainCastc(f) => {
            flag(&mut cfg, "castc.k", &f.k)?;
            flag(&mut cfg, "castc.alpha", &f.alpha)?;
            flag(&mut cfg, "castc.embed_dim", &f.embed_dim)?;
            flag(&mut cfg, "castc.pretrain_epochs", &f.epochs)?;
            flag(&mut cfg, "castc.pretrain_lr", &f.lr)?;
        }
        _ => {}
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let ctx = Ctx::new(resolve_config(cli)?)?;
    match &cli.command {
        Command::Synth => stages::cmd_synth(&ctx),
        Command::Normalize => stages::cmd_normalize(&ctx),
        Command::TrainStca(_) => stages::cmd_train_stca(&ctx),
        Command::Infer(_) => stages::cmd_infer(&ctx),
        Command::Grow(_) => stages::cmd_grow(&ctx),
        Command::TrainCastc(_) => stages::cmd_train_castc(&ctx),
        Command::Density => stages::cmd_density(&ctx),
        Command::Sample => stages::cmd_sample(&ctx),
        Command::Evaluate => stages::cmd_evaluate(&ctx),
        Command::Report => stages::cmd_report(&ctx),
        Command::Pipeline => stages::cmd_pipeline(&ctx),
    }
}
