//! Command-line harness: `gen`, `train`, `eval` and `export`.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod palette;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{OutfitWeights, RunConfig};
use error::Result;

#[derive(Debug, Parser)]
#[command(name = "clothlayer", version, about = "Layered clothed-human segmentation toolkit")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Labeling strategy, s1..s5.
    #[arg(long, global = true)]
    pub strategy: Option<String>,
    /// Backbone: set, edge or pt.
    #[arg(long, global = true)]
    pub backbone: Option<String>,
    /// Random rotation/scale/shift of training scans.
    #[arg(long, global = true)]
    pub augment: bool,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores, 1 = reference sequential path).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled scan dataset.
    Gen(GenArgs),
    /// Train a model on a dataset's train split.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Write colored per-layer PLY files for one scan.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub val_count: Option<usize>,
    #[arg(long)]
    pub points: Option<usize>,
    /// `uniform`, `table1` or nine comma-separated weights.
    #[arg(long)]
    pub outfit_weights: Option<String>,
    #[arg(long)]
    pub rays_per_view: Option<usize>,
    /// Scan a single scene spec instead of sampling scenes.
    #[arg(long)]
    pub scene: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_peak: Option<f64>,
    #[arg(long)]
    pub feature_width: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    /// `none` or `inverse-frequency`.
    #[arg(long)]
    pub class_weights: Option<String>,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// `train`, `val` or `all`.
    #[arg(long)]
    pub split: Option<String>,
    /// Score the ground truth against itself (pipeline check).
    #[arg(long)]
    pub ground_truth_as_prediction: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub scan: Option<PathBuf>,
    /// Predictions CSV; alternatively `--checkpoint`.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn parse_weights(s: &str) -> Result<OutfitWeights> {
    if s == "uniform" || s == "table1" {
        return Ok(OutfitWeights::Preset(s.into()));
    }
    s.split(',')
        .map(|w| w.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map(OutfitWeights::Explicit)
        .map_err(|_| error::CliError::Invalid(format!("outfit weights '{s}' are neither a preset nor numbers")))
}

impl Cli {
    /// Defaults, then the config file, then flags. Also reports whether the
    /// strategy was chosen explicitly.
    pub fn resolve(&self) -> Result<(RunConfig, bool)> {
        let (mut c, mut explicit) = match &self.config {
            Some(p) => {
                let c = RunConfig::from_file(p)?;
                let text = std::fs::read_to_string(p).unwrap_or_default();
                let has = toml::from_str::<toml::Table>(&text).is_ok_and(|t| t.contains_key("strategy"));
                (c, has)
            }
            None => (RunConfig::default(), false),
        };
        explicit |= self.strategy.is_some();
        set(&mut c.seed, self.seed);
        set(&mut c.strategy, self.strategy.clone());
        set(&mut c.backbone, self.backbone.clone());
        c.augment |= self.augment;
        c.out = self.out.clone().or(c.out);
        set(&mut c.threads, self.threads);
        match &self.command {
            Command::Gen(a) => {
                set(&mut c.scenes, a.scenes);
                set(&mut c.val_count, a.val_count);
                set(&mut c.points, a.points);
                set(&mut c.rays_per_view, a.rays_per_view);
                if let Some(w) = &a.outfit_weights {
                    c.outfit_weights = parse_weights(w)?;
                }
                c.scene = a.scene.clone().or(c.scene);
            }
            Command::Train(a) => {
                c.dataset = a.dataset.clone().or(c.dataset);
                set(&mut c.epochs, a.epochs);
                set(&mut c.batch_size, a.batch_size);
                set(&mut c.lr_peak, a.lr_peak);
                set(&mut c.feature_width, a.feature_width);
                set(&mut c.depth, a.depth);
                set(&mut c.class_weights, a.class_weights.clone());
                c.resume = a.resume.clone().or(c.resume);
            }
            Command::Eval(a) => {
                c.checkpoint = a.checkpoint.clone().or(c.checkpoint);
                c.dataset = a.dataset.clone().or(c.dataset);
                set(&mut c.split, a.split.clone());
            }
            Command::Export(a) => {
                c.scan = a.scan.clone().or(c.scan);
                c.predictions = a.predictions.clone().or(c.predictions);
                c.checkpoint = a.checkpoint.clone().or(c.checkpoint);
            }
        }
        c.validate()?;
        Ok((c, explicit))
    }

    /// Runs the selected command, printing a short summary to stdout.
    pub fn run(&self) -> Result<()> {
        let (cfg, strategy_explicit) = self.resolve()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| error::CliError::Invalid(format!("worker pool: {e}")))?;
        pool.install(|| self.dispatch(&cfg, strategy_explicit))
    }

    fn dispatch(&self, cfg: &RunConfig, strategy_explicit: bool) -> Result<()> {
        match &self.command {
            Command::Gen(_) => {
                let m = commands::gen::run(cfg)?;
                let val = m.split(manifest::Split::Val).count();
                println!("generated {} scans ({} train, {val} val)", m.entries.len(), m.entries.len() - val);
            }
            Command::Train(_) => {
                let t = commands::train::run(cfg)?;
                println!("trained to epoch {} -> {}", t.epochs_done, t.dir.display());
            }
            Command::Eval(a) => {
                let opts = commands::eval::EvalOptions {
                    ground_truth_as_prediction: a.ground_truth_as_prediction,
                    strategy_explicit,
                };
                print!("{}", commands::eval::run(cfg, &opts)?.to_text());
            }
            Command::Export(_) => {
                for p in commands::export::run(cfg)? {
                    println!("{}", p.display());
                }
            }
        }
        Ok(())
    }
}
