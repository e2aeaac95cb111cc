//! Segmentation scores: per-class IoU, per-layer mIoU, the layer-averaged
//! mIoU, mean class accuracy and overall accuracy.
//!
//! Counts are exact integers and accumulators merge by addition, so scores
//! do not depend on how points were batched.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::layering::{Strategy, StrategyLabels};

/// Confusion counts of one label layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    #[serde(rename = "fn")]
    pub fn_: Vec<u64>,
    pub total: u64,
    pub correct: u64,
}

impl LayerCounts {
    pub fn zeros(classes: usize) -> Self {
        LayerCounts { tp: vec![0; classes], fp: vec![0; classes], fn_: vec![0; classes], total: 0, correct: 0 }
    }

    /// Builds counts directly, checking that they describe a single-label
    /// classification (every wrong point is one FP and one FN).
    pub fn from_counts(tp: Vec<u64>, fp: Vec<u64>, fn_: Vec<u64>) -> Result<Self> {
        let c = tp.len();
        if fp.len() != c || fn_.len() != c || c == 0 {
            return Err(Error::InvalidArgument("tp/fp/fn must have the same non-zero length".into()));
        }
        let wrong_fp: u64 = fp.iter().sum();
        let wrong_fn: u64 = fn_.iter().sum();
        if wrong_fp != wrong_fn {
            return Err(Error::InvalidArgument(format!(
                "false positives ({wrong_fp}) and false negatives ({wrong_fn}) must balance"
            )));
        }
        let correct: u64 = tp.iter().sum();
        Ok(LayerCounts { total: correct + wrong_fn, correct, tp, fp, fn_ })
    }

    pub fn classes(&self) -> usize {
        self.tp.len()
    }

    /// `TP / (TP + FP + FN)`, or `None` when the class never occurs in
    /// either prediction or ground truth.
    pub fn iou(&self, class: usize) -> Option<f64> {
        let den = self.tp[class] + self.fp[class] + self.fn_[class];
        (den > 0).then(|| self.tp[class] as f64 / den as f64)
    }

    /// `TP / (TP + FN)`, or `None` when the class is absent from ground truth.
    pub fn accuracy(&self, class: usize) -> Option<f64> {
        let den = self.tp[class] + self.fn_[class];
        (den > 0).then(|| self.tp[class] as f64 / den as f64)
    }

    fn add(&mut self, other: &LayerCounts) {
        for c in 0..self.classes() {
            self.tp[c] += other.tp[c];
            self.fp[c] += other.fp[c];
            self.fn_[c] += other.fn_[c];
        }
        self.total += other.total;
        self.correct += other.correct;
    }
}

/// Running confusion counts for every layer of a strategy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionAccumulator {
    pub strategy: Strategy,
    pub layers: Vec<LayerCounts>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl ConfusionAccumulator {
    pub fn new(strategy: Strategy) -> Self {
        let layers = strategy.class_counts().into_iter().map(LayerCounts::zeros).collect();
        ConfusionAccumulator { strategy, layers }
    }

    /// Assembles an accumulator from per-layer counts.
    pub fn from_layers(strategy: Strategy, layers: Vec<LayerCounts>) -> Result<Self> {
        let want = strategy.class_counts();
        let got: Vec<usize> = layers.iter().map(LayerCounts::classes).collect();
        if want != got {
            return Err(Error::InvalidArgument(format!("{strategy} needs class counts {want:?}, got {got:?}")));
        }
        Ok(ConfusionAccumulator { strategy, layers })
    }

    /// Adds the confusion counts of one prediction/ground-truth pair.
    pub fn accumulate(&mut self, pred: &StrategyLabels, gt: &StrategyLabels) -> Result<()> {
        if pred.strategy != self.strategy || gt.strategy != self.strategy {
            return Err(Error::InvalidArgument(format!(
                "accumulator is {} but got prediction {} and ground truth {}",
                self.strategy, pred.strategy, gt.strategy
            )));
        }
        if pred.len() != gt.len() || pred.layers.len() != gt.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "prediction has {} points, ground truth {}",
                pred.len(),
                gt.len()
            )));
        }
        for (l, counts) in self.layers.iter_mut().enumerate() {
            let k = counts.classes();
            for (&p, &g) in pred.layers[l].iter().zip(&gt.layers[l]) {
                let (p, g) = (p as usize, g as usize);
                if p >= k || g >= k {
                    return Err(Error::InvalidArgument(format!("code out of range in layer {l}")));
                }
                counts.total += 1;
                if p == g {
                    counts.tp[p] += 1;
                    counts.correct += 1;
                } else {
                    counts.fp[p] += 1;
                    counts.fn_[g] += 1;
                }
            }
        }
        Ok(())
    }

    /// Adds another accumulator's counts into this one.
    pub fn merge(&mut self, other: &ConfusionAccumulator) -> Result<()> {
        if other.strategy != self.strategy {
            return Err(Error::InvalidArgument("cannot merge accumulators of different strategies".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add(b);
        }
        Ok(())
    }

    fn layer(&self, layer: usize) -> Result<&LayerCounts> {
        self.layers
            .get(layer)
            .ok_or_else(|| Error::InvalidArgument(format!("{} has no layer {layer}", self.strategy)))
    }

    pub fn iou(&self, layer: usize, class: usize) -> Option<f64> {
        let l = self.layers.get(layer)?;
        (class < l.classes()).then(|| l.iou(class)).flatten()
    }

    pub fn class_ious(&self, layer: usize) -> Vec<Option<f64>> {
        self.layers.get(layer).map_or_else(Vec::new, |l| (0..l.classes()).map(|c| l.iou(c)).collect())
    }

    /// Unweighted mean of the defined class IoUs of a layer.
    pub fn miou(&self, layer: usize) -> Result<f64> {
        let l = self.layer(layer)?;
        mean((0..l.classes()).filter_map(|c| l.iou(c))).ok_or(Error::UndefinedLayer(layer))
    }

    /// Unweighted mean of the layer mIoUs; layers with no defined class are
    /// skipped.
    pub fn avg_miou(&self) -> Result<f64> {
        mean((0..self.layers.len()).filter_map(|l| self.miou(l).ok())).ok_or(Error::UndefinedLayer(0))
    }

    /// `(mAcc, allAcc)` of a layer.
    pub fn macc_allacc(&self, layer: usize) -> Result<(f64, f64)> {
        let l = self.layer(layer)?;
        if l.total == 0 {
            return Err(Error::InvalidState(format!("no points accumulated in layer {layer}")));
        }
        let macc = mean((0..l.classes()).filter_map(|c| l.accuracy(c))).unwrap_or(0.0);
        Ok((macc, l.correct as f64 / l.total as f64))
    }

    pub fn report(&self, row_name: &str) -> Report {
        let layers = (0..self.layers.len())
            .map(|l| {
                let (macc, allacc) = self.macc_allacc(l).map_or((None, None), |(a, b)| (Some(a), Some(b)));
                LayerReport {
                    name: self.strategy.layer_names()[l].to_string(),
                    miou: self.miou(l).ok(),
                    macc,
                    allacc,
                    classes: self.strategy.class_names(l).iter().map(|s| s.to_string()).collect(),
                    ious: self.class_ious(l),
                }
            })
            .collect();
        Report { strategy: self.strategy, row: row_name.to_string(), avg_miou: self.avg_miou().ok(), layers }
    }
}

/// Scores of one layer, ready for printing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerReport {
    pub name: String,
    pub miou: Option<f64>,
    pub macc: Option<f64>,
    pub allacc: Option<f64>,
    pub classes: Vec<String>,
    pub ious: Vec<Option<f64>>,
}

/// Evaluation summary laid out like the usual results tables: for one
/// layer, mIoU / mAcc / allAcc and per-class IoU; for three layers, the
/// average mIoU then each layer's mIoU and per-class IoU. Values are
/// percentages with one decimal; undefined entries print as `-`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub strategy: Strategy,
    pub row: String,
    pub avg_miou: Option<f64>,
    pub layers: Vec<LayerReport>,
}

/// Formats a fraction as a percentage with one decimal.
pub fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{:.1}", 100.0 * v))
}

impl Report {
    pub fn header(&self) -> Vec<String> {
        if self.layers.len() == 1 {
            let mut h = vec!["Method".to_string(), "mIoU".into(), "mAcc".into(), "allAcc".into()];
            h.extend(self.layers[0].classes.iter().cloned());
            h
        } else {
            let mut h = vec!["Backbone".to_string(), "avg mIoU".into()];
            for (i, l) in self.layers.iter().enumerate() {
                h.push(format!("L{} mIoU", i + 1));
                h.extend(l.classes.iter().cloned());
            }
            h
        }
    }

    pub fn cells(&self) -> Vec<String> {
        let mut r = vec![self.row.clone()];
        if self.layers.len() == 1 {
            let l = &self.layers[0];
            r.extend([pct(l.miou), pct(l.macc), pct(l.allacc)]);
            r.extend(l.ious.iter().map(|&x| pct(x)));
        } else {
            r.push(pct(self.avg_miou));
            for l in &self.layers {
                r.push(pct(l.miou));
                r.extend(l.ious.iter().map(|&x| pct(x)));
            }
        }
        r
    }

    /// Plain-text table with a layer banner row for multi-layer strategies.
    pub fn to_text(&self) -> String {
        let header = self.header();
        let cells = self.cells();
        let widths: Vec<usize> = header.iter().zip(&cells).map(|(h, c)| h.len().max(c.len())).collect();
        let first = widths[0] + 2;
        let line = |row: &[String]| -> String {
            let mut s = format!("{:<first$}", row[0]);
            for (v, w) in row[1..].iter().zip(&widths[1..]) {
                s.push_str(&format!("  {v:>w$}"));
            }
            s.trim_end().to_string()
        };
        let mut out = format!("strategy {}\n", self.strategy);
        if self.layers.len() > 1 {
            let mut banner = format!("{:<first$}  {:>w$}", "", "", w = widths[1]);
            let mut col = 2;
            for (i, l) in self.layers.iter().enumerate() {
                let span = 1 + l.classes.len();
                let width: usize = widths[col..col + span].iter().sum::<usize>() + 2 * (span - 1);
                banner.push_str(&format!("  {:^width$}", format!("Layer {} ({})", i + 1, l.name)));
                col += span;
            }
            out.push_str(banner.trim_end());
            out.push('\n');
        }
        out.push_str(&line(&header));
        out.push('\n');
        out.push_str(&line(&cells));
        out.push('\n');
        out
    }
}
