use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backbone::{Backbone, BackboneKind, Inputs};
use super::graph::{Graph, Var};
use super::layers::{Dense, Linear};
use super::matrix::Matrix;
use super::params::ParamStore;
use super::real::Real;
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::layering::{Strategy, StrategyLabels};

/// Output head of one label layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub layer: String,
    pub classes: usize,
}

/// One head per layer of `strategy`, in layer order.
pub fn heads_for(strategy: Strategy) -> Vec<HeadSpec> {
    strategy
        .layer_names()
        .iter()
        .zip(strategy.class_counts())
        .map(|(name, classes)| HeadSpec { layer: (*name).to_string(), classes })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    pub strategy: Strategy,
    pub feature_width: usize,
    pub depth: usize,
    pub k_neighbors: usize,
    pub heads: Vec<HeadSpec>,
    pub augment: bool,
}

impl ModelConfig {
    pub fn new(backbone: BackboneKind, strategy: Strategy) -> Self {
        ModelConfig {
            backbone,
            strategy,
            feature_width: 64,
            depth: 2,
            k_neighbors: 16,
            heads: heads_for(strategy),
            augment: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads != heads_for(self.strategy) {
            return Err(Error::InvalidArgument(format!(
                "heads {:?} do not match the layers of {}",
                self.heads, self.strategy
            )));
        }
        if self.feature_width < 2 {
            return Err(Error::InvalidArgument("feature_width must be at least 2".into()));
        }
        if !(1..=4).contains(&self.depth) {
            return Err(Error::InvalidArgument("depth must be between 1 and 4".into()));
        }
        if self.k_neighbors == 0 {
            return Err(Error::InvalidArgument("k_neighbors must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Head {
    hidden: Dense,
    out: Linear,
}

/// Shared backbone plus one independent MLP head per label layer.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    backbone: Backbone,
    heads: Vec<Head>,
}

/// Graph handles of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub features: Var,
    pub logits: Vec<Var>,
}

impl<T: Real> Model<T> {
    /// Freshly initialized model; weights depend only on `config` and `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let w = config.feature_width;
        let backbone = Backbone::new(config.backbone, w, config.depth, &mut params, &mut rng);
        let heads = config
            .heads
            .iter()
            .map(|h| Head {
                hidden: Dense::new(&mut params, &format!("head.{}.0", h.layer), w, w, &mut rng),
                out: Linear::new(&mut params, &format!("head.{}.1", h.layer), w, h.classes, true, &mut rng),
            })
            .collect();
        Ok(Model { config, params, backbone, heads })
    }

    /// Same architecture with different element type.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            backbone: self.backbone.clone(),
            heads: self.heads.clone(),
        }
    }

    pub fn strategy(&self) -> Strategy {
        self.config.strategy
    }

    pub fn backbone_forward(&self, g: &mut Graph<'_, T>, input: &Inputs<T>) -> Result<Var> {
        self.backbone.forward(g, input, self.config.k_neighbors)
    }

    /// Logits of every head from `N × feature_width` features.
    pub fn heads_forward(&self, g: &mut Graph<'_, T>, features: Var) -> Result<Vec<Var>> {
        let (_, width) = g.shape(features);
        if width != self.config.feature_width {
            return Err(Error::InvalidArgument(format!(
                "features have width {width}, heads expect {}",
                self.config.feature_width
            )));
        }
        self.heads
            .iter()
            .map(|h| {
                let x = h.hidden.forward(g, features)?;
                h.out.forward(g, x)
            })
            .collect()
    }

    pub fn forward(&self, g: &mut Graph<'_, T>, input: &Inputs<T>) -> Result<Forward> {
        let features = self.backbone_forward(g, input)?;
        let logits = self.heads_forward(g, features)?;
        Ok(Forward { features, logits })
    }

    /// Logit matrices of every layer for `cloud`.
    pub fn logits(&self, cloud: &PointCloud) -> Result<Vec<Matrix<T>>> {
        let input = Inputs::from_cloud(cloud);
        let mut g = Graph::new(&self.params);
        let fwd = self.forward(&mut g, &input)?;
        Ok(fwd.logits.iter().map(|&v| g.value(v).clone()).collect())
    }

    /// Per-layer argmax labels.
    pub fn predict(&self, cloud: &PointCloud) -> Result<StrategyLabels> {
        predict_from_logits(self.strategy(), &self.logits(cloud)?)
    }
}

/// Argmax per row of every layer; ties go to the lower class.
pub fn predict_from_logits<T: Real>(strategy: Strategy, logits: &[Matrix<T>]) -> Result<StrategyLabels> {
    StrategyLabels::new(strategy, logits.iter().map(Matrix::argmax_rows).collect())
}

/// Sum over layers of the mean cross-entropy of each layer.
pub fn multilayer_loss<T: Real>(
    g: &mut Graph<'_, T>,
    logits: &[Var],
    gt: &StrategyLabels,
    class_weights: Option<&[Vec<f64>]>,
) -> Result<Var> {
    if logits.len() != gt.layers.len() {
        return Err(Error::InvalidArgument(format!(
            "{} logit layers for {} label layers",
            logits.len(),
            gt.layers.len()
        )));
    }
    if let Some(w) = class_weights {
        if w.len() != logits.len() {
            return Err(Error::InvalidArgument("one class-weight vector per layer is required".into()));
        }
    }
    let mut total: Option<Var> = None;
    for (l, (&z, labels)) in logits.iter().zip(&gt.layers).enumerate() {
        let (_, cols) = g.shape(z);
        if cols != gt.class_counts[l] {
            return Err(Error::InvalidArgument(format!(
                "layer {l} has {cols} logits but {} classes",
                gt.class_counts[l]
            )));
        }
        let weights: Option<Arc<[T]>> = class_weights.map(|w| w[l].iter().map(|&x| T::from_f64_lossy(x)).collect());
        let ce = g.cross_entropy(z, labels.as_slice().into(), weights)?;
        total = Some(match total {
            Some(t) => g.add(t, ce)?,
            None => ce,
        });
    }
    total.ok_or_else(|| Error::InvalidArgument("no layers to score".into()))
}

/// Inverse-frequency class weights per layer, normalized so that the
/// weighted point count equals the point count. Absent classes get 0.
pub fn inverse_frequency_weights(labels: &[&StrategyLabels]) -> Result<Vec<Vec<f64>>> {
    let first = labels.first().ok_or_else(|| Error::InvalidArgument("no labels".into()))?;
    let mut counts: Vec<Vec<u64>> = first.class_counts.iter().map(|&c| vec![0; c]).collect();
    for l in labels {
        if l.strategy != first.strategy {
            return Err(Error::InvalidArgument("labels of mixed strategies".into()));
        }
        for (cnt, layer) in counts.iter_mut().zip(&l.layers) {
            for &c in layer {
                cnt[c as usize] += 1;
            }
        }
    }
    Ok(counts
        .iter()
        .map(|cnt| {
            let total: u64 = cnt.iter().sum();
            let present = cnt.iter().filter(|&&c| c > 0).count() as f64;
            cnt.iter()
                .map(|&c| if c == 0 { 0.0 } else { total as f64 / (present * c as f64) })
                .collect()
        })
        .collect())
}
