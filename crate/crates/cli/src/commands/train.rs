//! Training: fit a model on the train split, log per-epoch metrics and keep
//! a resumable checkpoint.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use clothlayer::nn::checkpoint::{self, CheckpointMeta, OptimizerMeta};
use clothlayer::nn::model::inverse_frequency_weights;
use clothlayer::nn::{EpochLog, Model, Sample, Trainer};

use super::{load_split, output_dir, write_class_codes};
use crate::config::RunConfig;
use crate::error::{invalid, IoContext, Result};
use crate::manifest::{Manifest, Split};

pub const CHECKPOINT: &str = "checkpoint.ckpt";
pub const METRICS: &str = "metrics.csv";

#[derive(Debug)]
pub struct TrainOutcome {
    pub dir: PathBuf,
    pub epochs_done: usize,
    /// Rows produced by this invocation.
    pub log: Vec<EpochLog>,
}

fn samples(items: Vec<(String, Sample)>) -> Vec<Sample> {
    items.into_iter().map(|(_, s)| s).collect()
}

/// Data rows of an earlier metrics log for epochs before `before`.
fn earlier_rows(path: &Path, before: usize) -> Result<Vec<String>> {
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(Vec::new());
    };
    Ok(text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("epoch"))
        .filter(|l| l.split(',').next().and_then(|e| e.parse::<usize>().ok()).is_some_and(|e| e < before))
        .map(str::to_string)
        .collect())
}

pub fn save_checkpoint(path: &Path, cfg: &RunConfig, trainer: &Trainer<f32>) -> Result<()> {
    let meta = CheckpointMeta {
        toolkit_version: clothlayer::VERSION.into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        epoch: trainer.epochs_done,
        model: trainer.model.config.clone(),
        optimizer: Some(OptimizerMeta { config: trainer.optimizer.config, step: trainer.optimizer.step }),
    };
    let tmp = path.with_extension("ckpt.partial");
    let f = fs::File::create(&tmp).at(&tmp)?;
    checkpoint::save(BufWriter::new(f), &meta, &trainer.model, Some(&trainer.optimizer)).at(&tmp)?;
    fs::rename(&tmp, path).at(path)
}

pub fn load_checkpoint(path: &Path) -> Result<checkpoint::Loaded<f32>> {
    let f = fs::File::open(path).at(path)?;
    checkpoint::load(BufReader::new(f)).at(path)
}

pub fn run(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let Some(dataset) = &cfg.dataset else {
        return invalid("train needs a dataset directory (--dataset)");
    };
    let strategy = cfg.strategy()?;
    let manifest = Manifest::read(dataset)?;
    let train = samples(load_split(dataset, &manifest, Some(Split::Train), strategy)?);
    if train.is_empty() {
        return invalid(format!("{}: the training split is empty", dataset.display()));
    }
    let val = samples(load_split(dataset, &manifest, Some(Split::Val), strategy)?);
    let dir = output_dir(cfg, "run")?;

    let mut tc = cfg.train_config()?;
    if cfg.class_weights == "inverse-frequency" {
        let labels: Vec<_> = train.iter().map(|s| &s.labels).collect();
        tc.class_weights = Some(inverse_frequency_weights(&labels)?);
    }

    let (mut trainer, mut rows) = match &cfg.resume {
        Some(path) => {
            let (meta, model, optimizer) = load_checkpoint(path)?;
            if meta.model.strategy != strategy {
                return invalid(format!(
                    "{} was trained with {} but the run uses {strategy}",
                    path.display(),
                    meta.model.strategy
                ));
            }
            let Some(optimizer) = optimizer else {
                return invalid(format!("{} carries no optimizer state to resume from", path.display()));
            };
            let prior = path.parent().map(|p| p.join(METRICS)).unwrap_or_else(|| PathBuf::from(METRICS));
            let rows = earlier_rows(&prior, meta.epoch)?;
            (Trainer::resume(model, optimizer, tc, meta.epoch)?, rows)
        }
        None => (Trainer::new(Model::<f32>::new(cfg.model_config()?, cfg.seed)?, tc)?, Vec::new()),
    };

    let layers = strategy.layer_names();
    let head = format!(
        "# clothlayer {}\n# config_hash {}\n# seed {}\n{}\n",
        clothlayer::VERSION,
        cfg.hash(),
        cfg.seed,
        EpochLog::csv_header(layers, !val.is_empty())
    );
    let metrics_path = dir.join(METRICS);
    let ckpt_path = dir.join(CHECKPOINT);
    let write_metrics = |rows: &[String]| -> Result<()> {
        let mut text = head.clone();
        for r in rows {
            text.push_str(r);
            text.push('\n');
        }
        fs::write(&metrics_path, text).at(&metrics_path)
    };
    cfg.write_resolved(&dir)?;
    write_class_codes(&dir, strategy)?;
    write_metrics(&rows)?;

    let val_ref = (!val.is_empty()).then_some(val.as_slice());
    let mut log = Vec::new();
    while trainer.epochs_done < trainer.config.epochs {
        let row = trainer.run_epoch(&train, val_ref)?;
        eprintln!(
            "epoch {:>3}  lr {:.3e}  loss {:.4}  train {:.4}{}",
            row.epoch,
            row.lr,
            row.loss,
            row.train_avg_miou.unwrap_or(f64::NAN),
            row.val_avg_miou.map(|v| format!("  val {v:.4}")).unwrap_or_default()
        );
        rows.push(row.csv_row());
        write_metrics(&rows)?;
        save_checkpoint(&ckpt_path, cfg, &trainer)?;
        log.push(row);
    }
    if !ckpt_path.exists() {
        save_checkpoint(&ckpt_path, cfg, &trainer)?;
    }
    Ok(TrainOutcome { dir, epochs_done: trainer.epochs_done, log })
}
