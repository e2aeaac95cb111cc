//! Evaluation: per-class IoU, per-layer and average mIoU, and counts of
//! predictions whose layer codes contradict each other.

use std::fs;

use clothlayer::layering::decode;
use clothlayer::metrics::{ConfusionAccumulator, Report};
use clothlayer::{parallel, StrategyLabels};
use serde::Serialize;

use super::train::load_checkpoint;
use super::{load_split, output_dir, split_filter};
use crate::config::RunConfig;
use crate::error::{invalid, IoContext, Result};
use crate::manifest::Manifest;

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Score the ground truth against itself instead of a checkpoint.
    pub ground_truth_as_prediction: bool,
    /// The strategy was set by flag or config file and must match the
    /// checkpoint.
    pub strategy_explicit: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Consistency {
    /// Points whose predicted codes no ground truth could produce.
    pub inconsistent_points: usize,
    /// Points predicted as neither body nor garment.
    pub unlabeled_points: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub toolkit_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub split: String,
    pub scans: usize,
    pub points: usize,
    pub report: Report,
    pub consistency: Consistency,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        format!(
            "# clothlayer {}\n# config_hash {}\n# seed {}\nsplit {} ({} scans, {} points)\n{}\nconsistency: {} inconsistent points, {} unlabeled points\n",
            self.toolkit_version,
            self.config_hash,
            self.seed,
            self.split,
            self.scans,
            self.points,
            self.report.to_text().trim_end(),
            self.consistency.inconsistent_points,
            self.consistency.unlabeled_points
        )
    }
}

pub fn run(cfg: &RunConfig, opts: &EvalOptions) -> Result<EvalReport> {
    cfg.validate()?;
    let Some(dataset) = &cfg.dataset else {
        return invalid("eval needs a dataset directory (--dataset)");
    };
    let (strategy, model, row) = if opts.ground_truth_as_prediction {
        (cfg.strategy()?, None, "ground truth".to_string())
    } else {
        let Some(path) = &cfg.checkpoint else {
            return invalid("eval needs --checkpoint (or --ground-truth-as-prediction)");
        };
        let (meta, model, _) = load_checkpoint(path)?;
        let s = meta.model.strategy;
        if opts.strategy_explicit && s != cfg.strategy()? {
            return invalid(format!("{} predicts {s}, not the requested {}", path.display(), cfg.strategy));
        }
        let row = format!("{}{}", meta.model.backbone, if meta.model.augment { " aug" } else { "" });
        (s, Some(model), row)
    };

    let manifest = Manifest::read(dataset)?;
    let items = load_split(dataset, &manifest, split_filter(cfg), strategy)?;
    if items.is_empty() {
        return invalid(format!("{}: split '{}' has no scans", dataset.display(), cfg.split));
    }
    let preds: Vec<StrategyLabels> = match &model {
        Some(m) => parallel::map_slice(&items, |(_, s)| m.predict(&s.cloud))
            .into_iter()
            .collect::<clothlayer::Result<_>>()?,
        None => items.iter().map(|(_, s)| s.labels.clone()).collect(),
    };

    let mut acc = ConfusionAccumulator::new(strategy);
    let mut consistency = Consistency { inconsistent_points: 0, unlabeled_points: 0 };
    for ((_, s), p) in items.iter().zip(&preds) {
        acc.accumulate(p, &s.labels)?;
        let d = decode(p)?;
        consistency.inconsistent_points += d.inconsistent.len();
        consistency.unlabeled_points += d.unlabeled;
    }
    let out = EvalReport {
        toolkit_version: clothlayer::VERSION.into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        split: cfg.split.clone(),
        scans: items.len(),
        points: items.iter().map(|(_, s)| s.cloud.len()).sum(),
        report: acc.report(&row),
        consistency,
    };
    let dir = output_dir(cfg, "eval")?;
    let txt = dir.join("report.txt");
    fs::write(&txt, out.to_text()).at(&txt)?;
    let json = dir.join("report.json");
    fs::write(&json, serde_json::to_string_pretty(&out).expect("report serializes") + "\n").at(&json)?;
    Ok(out)
}
