//! Mini-batch training with AdamW, a one-cycle schedule and optional
//! rotation/scale/translation augmentation.
//!
//! Every random draw of an epoch comes from a generator seeded with
//! `(seed, epoch)` and happens on the calling thread before any parallel
//! work. Per-sample gradients are summed in sample order, so the result
//! does not depend on the number of worker threads.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backbone::Inputs;
use super::graph::Graph;
use super::matrix::Matrix;
use super::model::{multilayer_loss, predict_from_logits, Model};
use super::optim::{AdamW, AdamWConfig, OneCycle};
use super::real::Real;
use crate::error::{Error, Result};
use crate::geometry::{self, PointCloud, Vec3};
use crate::layering::{encode, Strategy, StrategyLabels};
use crate::metrics::ConfusionAccumulator;
use crate::parallel;
use crate::scan::LabeledScan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: AdamWConfig,
    pub lr_peak: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Optional per-layer class weights for the loss.
    pub class_weights: Option<Vec<Vec<f64>>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: AdamWConfig::default(),
            lr_peak: 0.005,
            epochs: 100,
            batch_size: 8,
            seed: 0,
            class_weights: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_peak > 0.0) || !self.lr_peak.is_finite() {
            return Err(Error::InvalidArgument("lr_peak must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// A training or validation example in a fixed strategy encoding.
#[derive(Debug, Clone)]
pub struct Sample {
    pub cloud: PointCloud,
    pub labels: StrategyLabels,
}

impl Sample {
    pub fn from_scan(scan: &LabeledScan, strategy: Strategy) -> Result<Self> {
        Ok(Sample { cloud: scan.cloud.clone(), labels: encode(&scan.labels, strategy)? })
    }
}

/// Random rigid-plus-scale perturbation applied to one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub angle: f64,
    pub scale: f64,
    pub translation: Vec3,
}

impl Augmentation {
    pub const SCALE_RANGE: (f64, f64) = (0.9, 1.1);
    pub const MAX_SHIFT: f64 = 0.1;

    /// Rotation about the vertical axis, isotropic scale and shift.
    pub fn draw(rng: &mut impl Rng) -> Self {
        let angle = rng.random_range(0.0..TAU);
        let scale = rng.random_range(Self::SCALE_RANGE.0..Self::SCALE_RANGE.1);
        let s = Self::MAX_SHIFT;
        let translation = Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s));
        Augmentation { angle, scale, translation }
    }

    pub fn apply(&self, cloud: &PointCloud) -> Result<PointCloud> {
        geometry::transform(cloud, &geometry::rotation_z(self.angle), self.scale, &self.translation)
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Learning rate of the epoch's last step.
    pub lr: f64,
    /// Mean per-sample loss over the epoch.
    pub loss: f64,
    pub train_miou: Vec<Option<f64>>,
    pub train_avg_miou: Option<f64>,
    pub val_miou: Option<Vec<Option<f64>>>,
    pub val_avg_miou: Option<f64>,
}

fn opt_cell(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v:.6}"))
}

impl EpochLog {
    pub fn csv_header(layer_names: &[&str], with_val: bool) -> String {
        let mut h = String::from("epoch,lr,loss,train_avg_miou");
        for n in layer_names {
            let _ = write!(h, ",train_miou_{n}");
        }
        if with_val {
            h.push_str(",val_avg_miou");
            for n in layer_names {
                let _ = write!(h, ",val_miou_{n}");
            }
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let mut r = format!("{},{:.8e},{:.6},{}", self.epoch, self.lr, self.loss, opt_cell(self.train_avg_miou));
        for &m in &self.train_miou {
            let _ = write!(r, ",{}", opt_cell(m));
        }
        if let Some(val) = &self.val_miou {
            let _ = write!(r, ",{}", opt_cell(self.val_avg_miou));
            for &m in val {
                let _ = write!(r, ",{}", opt_cell(m));
            }
        }
        r
    }
}

fn layer_mious(acc: &ConfusionAccumulator) -> Vec<Option<f64>> {
    (0..acc.layers.len()).map(|l| acc.miou(l).ok()).collect()
}

/// Scores `model` on `samples` without augmentation.
pub fn evaluate<T: Real>(model: &Model<T>, samples: &[Sample]) -> Result<ConfusionAccumulator> {
    let preds = parallel::map_slice(samples, |s| model.predict(&s.cloud));
    let mut acc = ConfusionAccumulator::new(model.strategy());
    for (p, s) in preds.into_iter().zip(samples) {
        acc.accumulate(&p?, &s.labels)?;
    }
    Ok(acc)
}

/// Loss, parameter gradients and predictions of one sample.
fn sample_step<T: Real>(
    model: &Model<T>,
    cloud: &PointCloud,
    labels: &StrategyLabels,
    weights: Option<&[Vec<f64>]>,
) -> Result<(f64, Vec<Option<Matrix<T>>>, StrategyLabels)> {
    let input = Inputs::from_cloud(cloud);
    let mut g = Graph::new(&model.params);
    let fwd = model.forward(&mut g, &input)?;
    let loss = multilayer_loss(&mut g, &fwd.logits, labels, weights)?;
    let value = g.value(loss).data[0].to_f64().unwrap_or(f64::NAN);
    let logits: Vec<Matrix<T>> = fwd.logits.iter().map(|&v| g.value(v).clone()).collect();
    let pred = predict_from_logits(model.strategy(), &logits)?;
    let grads = g.backward(loss)?.into_params();
    Ok((value, grads, pred))
}

/// Training state: model, optimizer, completed epochs and log.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub model: Model<T>,
    pub optimizer: AdamW<T>,
    pub config: TrainConfig,
    pub epochs_done: usize,
    pub log: Vec<EpochLog>,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    crate::geometry::splitmix64(seed ^ (epoch as u64).wrapping_mul(0xA24B_AED4_963E_E407))
}

impl<T: Real> Trainer<T> {
    pub fn new(model: Model<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = AdamW::new(config.optimizer, &model.params);
        Ok(Trainer { model, optimizer, config, epochs_done: 0, log: Vec::new() })
    }

    /// Continues from a saved optimizer state after `epochs_done` epochs.
    pub fn resume(model: Model<T>, optimizer: AdamW<T>, config: TrainConfig, epochs_done: usize) -> Result<Self> {
        config.validate()?;
        if optimizer.m.len() != model.params.len() {
            return Err(Error::InvalidState("optimizer state does not match the model".into()));
        }
        Ok(Trainer { model, optimizer, config, epochs_done, log: Vec::new() })
    }

    fn schedule(&self, n_train: usize) -> OneCycle {
        let per_epoch = n_train.div_ceil(self.config.batch_size);
        OneCycle::new(self.config.lr_peak, self.config.epochs * per_epoch)
    }

    /// Runs one epoch and appends its log row.
    pub fn run_epoch(&mut self, train: &[Sample], val: Option<&[Sample]>) -> Result<EpochLog> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        let strategy = self.model.strategy();
        if let Some(bad) = train.iter().chain(val.unwrap_or(&[])).find(|s| s.labels.strategy != strategy) {
            return Err(Error::InvalidArgument(format!(
                "sample encoded with {} but the model predicts {strategy}",
                bad.labels.strategy
            )));
        }
        let epoch = self.epochs_done;
        let schedule = self.schedule(train.len());
        let per_epoch = train.len().div_ceil(self.config.batch_size);
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(self.config.seed, epoch));
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);

        let mut acc = ConfusionAccumulator::new(strategy);
        let mut loss_sum = 0.0;
        let mut lr = schedule.at_step(epoch * per_epoch);
        let weights = self.config.class_weights.clone();
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let clouds: Vec<PointCloud> = if self.model.config.augment {
                batch
                    .iter()
                    .map(|&i| Augmentation::draw(&mut rng).apply(&train[i].cloud))
                    .collect::<Result<_>>()?
            } else {
                batch.iter().map(|&i| train[i].cloud.clone()).collect()
            };
            let model = &self.model;
            let results = parallel::map_range(batch.len(), |j| {
                sample_step(model, &clouds[j], &train[batch[j]].labels, weights.as_deref())
            });
            let step = epoch * per_epoch + b;
            lr = schedule.at_step(step);
            let mut total: Vec<Option<Matrix<T>>> = vec![None; self.model.params.len()];
            let mut batch_loss = 0.0;
            for (j, r) in results.into_iter().enumerate() {
                let (loss, grads, pred) = r?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss {loss} at epoch {epoch}, batch {b}, sample {}, lr {lr:e}",
                        batch[j]
                    )));
                }
                batch_loss += loss;
                acc.accumulate(&pred, &train[batch[j]].labels)?;
                for (t, g) in total.iter_mut().zip(grads) {
                    match (t.as_mut(), g) {
                        (Some(t), Some(g)) => t.add_assign(&g),
                        (None, Some(g)) => *t = Some(g),
                        _ => {}
                    }
                }
            }
            let inv = T::from_f64_lossy(1.0 / batch.len() as f64);
            for t in total.iter_mut().flatten() {
                t.scale_assign(inv);
                if !t.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient at epoch {epoch}, batch {b}, lr {lr:e}"
                    )));
                }
            }
            self.optimizer.update(&mut self.model.params, &total, lr)?;
            loss_sum += batch_loss;
        }

        let (val_miou, val_avg_miou) = match val {
            Some(v) if !v.is_empty() => {
                let va = evaluate(&self.model, v)?;
                (Some(layer_mious(&va)), va.avg_miou().ok())
            }
            _ => (None, None),
        };
        let row = EpochLog {
            epoch,
            lr,
            loss: loss_sum / train.len() as f64,
            train_miou: layer_mious(&acc),
            train_avg_miou: acc.avg_miou().ok(),
            val_miou,
            val_avg_miou,
        };
        self.epochs_done += 1;
        self.log.push(row.clone());
        Ok(row)
    }

    /// Trains until `config.epochs` epochs are done, calling `on_epoch`
    /// after each one.
    pub fn fit(
        &mut self,
        train: &[Sample],
        val: Option<&[Sample]>,
        mut on_epoch: impl FnMut(&EpochLog),
    ) -> Result<()> {
        while self.epochs_done < self.config.epochs {
            let row = self.run_epoch(train, val)?;
            on_epoch(&row);
        }
        Ok(())
    }
}

/// Trains a fresh model on `dataset` and returns it with its epoch log.
pub fn train(
    dataset: &[LabeledScan],
    model: Model<f32>,
    config: TrainConfig,
) -> Result<(Model<f32>, Vec<EpochLog>)> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let samples: Vec<Sample> = dataset
        .iter()
        .map(|s| Sample::from_scan(s, model.strategy()))
        .collect::<Result<_>>()?;
    let mut trainer = Trainer::new(model, config)?;
    trainer.fit(&samples, None, |_| {})?;
    Ok((trainer.model, trainer.log))
}
