//! Flat run configuration.
//!
//! Values come from built-in defaults, then an optional TOML file, then
//! command-line flags. The resolved configuration is written next to every
//! run's outputs; its hash covers every field that can change a result and
//! leaves out paths and the thread count.

use std::fs;
use std::path::{Path, PathBuf};

use clothlayer::layering::Strategy;
use clothlayer::nn::{AdamWConfig, BackboneKind, ModelConfig, TrainConfig};
use clothlayer::scan::ScanConfig;
use clothlayer::scene::BodySpec;
use clothlayer::GarmentClass;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, CliError, IoContext, Result};

/// Per-combination scene shares for dataset generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OutfitWeights {
    /// `"uniform"` or `"table1"`.
    Preset(String),
    /// Nine weights in upper-major order: long-shirt, t-shirt, top, each
    /// with long-pants, shorts, skirt.
    Explicit(Vec<f64>),
}

/// Scene counts per outfit of the reference dataset composition (3306
/// meshes), in upper-major order.
pub const TABLE1_COUNTS: [f64; 9] = [308.0, 388.0, 140.0, 504.0, 500.0, 154.0, 500.0, 502.0, 310.0];

/// Outfit combinations in upper-major order.
pub fn combinations() -> Vec<(GarmentClass, GarmentClass)> {
    GarmentClass::UPPER
        .iter()
        .flat_map(|&u| GarmentClass::LOWER.iter().map(move |&l| (u, l)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; 0 uses every core, 1 is the reference sequential path.
    pub threads: usize,
    pub strategy: String,
    pub backbone: String,
    pub augment: bool,
    pub out: Option<PathBuf>,

    // dataset generation
    pub scenes: usize,
    pub val_count: usize,
    pub points: usize,
    pub outfit_weights: OutfitWeights,
    pub overlap_band_min_m: f64,
    pub overlap_band_max_m: f64,
    pub rays_per_view: usize,
    pub noise_sigma_m: f64,
    pub body_tight_threshold_m: f64,
    /// Scene spec file to scan instead of sampling scenes.
    pub scene: Option<PathBuf>,

    // training
    pub dataset: Option<PathBuf>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_peak: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub feature_width: usize,
    pub depth: usize,
    pub k_neighbors: usize,
    /// `"none"` or `"inverse-frequency"`.
    pub class_weights: String,
    pub resume: Option<PathBuf>,

    // evaluation and export
    pub checkpoint: Option<PathBuf>,
    /// `"train"`, `"val"` or `"all"`.
    pub split: String,
    pub scan: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let adam = AdamWConfig::default();
        let train = TrainConfig::default();
        RunConfig {
            seed: 0,
            threads: 0,
            strategy: "s2".into(),
            backbone: "pt".into(),
            augment: false,
            out: None,
            scenes: 90,
            val_count: 10,
            points: 2048,
            outfit_weights: OutfitWeights::Preset("uniform".into()),
            overlap_band_min_m: -0.04,
            overlap_band_max_m: 0.12,
            rays_per_view: ScanConfig::default().rays_per_view,
            noise_sigma_m: ScanConfig::default().noise_sigma,
            body_tight_threshold_m: BodySpec::default().tight_threshold,
            scene: None,
            dataset: None,
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr_peak: train.lr_peak,
            weight_decay: adam.weight_decay,
            beta1: adam.beta1,
            beta2: adam.beta2,
            feature_width: 64,
            depth: 2,
            k_neighbors: 16,
            class_weights: "none".into(),
            resume: None,
            checkpoint: None,
            split: "val".into(),
            scan: None,
            predictions: None,
        }
    }
}

/// Fields excluded from the configuration hash.
const UNHASHED: &[&str] = &["threads", "out", "dataset", "resume", "checkpoint", "scan", "predictions", "scene"];

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        toml::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
    }

    pub fn strategy(&self) -> Result<Strategy> {
        Ok(self.strategy.parse()?)
    }

    pub fn backbone(&self) -> Result<BackboneKind> {
        Ok(self.backbone.parse()?)
    }

    pub fn validate(&self) -> Result<()> {
        self.strategy()?;
        self.backbone()?;
        self.weights()?;
        if self.points == 0 {
            return invalid("points must be positive");
        }
        if self.overlap_band_min_m > self.overlap_band_max_m {
            return invalid("overlap_band_min_m exceeds overlap_band_max_m");
        }
        if !matches!(self.class_weights.as_str(), "none" | "inverse-frequency") {
            return invalid(format!("class_weights must be 'none' or 'inverse-frequency', not '{}'", self.class_weights));
        }
        if !matches!(self.split.as_str(), "train" | "val" | "all") {
            return invalid(format!("split must be train, val or all, not '{}'", self.split));
        }
        self.model_config()?.validate()?;
        self.train_config()?.validate()?;
        self.scan_config(0).validate()?;
        Ok(())
    }

    /// Normalized combination weights in [`combinations`] order.
    pub fn weights(&self) -> Result<Vec<f64>> {
        let w: Vec<f64> = match &self.outfit_weights {
            OutfitWeights::Preset(p) if p == "uniform" => vec![1.0; 9],
            OutfitWeights::Preset(p) if p == "table1" => TABLE1_COUNTS.to_vec(),
            OutfitWeights::Preset(p) => return invalid(format!("unknown outfit_weights preset '{p}'")),
            OutfitWeights::Explicit(w) => w.clone(),
        };
        if w.len() != 9 || w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || w.iter().sum::<f64>() <= 0.0 {
            return invalid("outfit_weights needs nine non-negative numbers with a positive sum");
        }
        let total: f64 = w.iter().sum();
        Ok(w.iter().map(|x| x / total).collect())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut m = ModelConfig::new(self.backbone()?, self.strategy()?);
        m.feature_width = self.feature_width;
        m.depth = self.depth;
        m.k_neighbors = self.k_neighbors;
        m.augment = self.augment;
        Ok(m)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            optimizer: AdamWConfig {
                beta1: self.beta1,
                beta2: self.beta2,
                weight_decay: self.weight_decay,
                ..AdamWConfig::default()
            },
            lr_peak: self.lr_peak,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            class_weights: None,
        })
    }

    pub fn scan_config(&self, seed: u64) -> ScanConfig {
        ScanConfig { rays_per_view: self.rays_per_view, noise_sigma: self.noise_sigma_m, seed, ..ScanConfig::default() }
    }

    pub fn body_spec(&self) -> BodySpec {
        BodySpec { tight_threshold: self.body_tight_threshold_m, ..BodySpec::default() }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 (hex) of the result-relevant fields.
    pub fn hash(&self) -> String {
        let mut value = toml::Value::try_from(self).expect("config serializes");
        if let toml::Value::Table(t) = &mut value {
            for k in UNHASHED {
                t.remove(*k);
            }
        }
        let canonical = toml::to_string(&value).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Resolved configuration with a provenance header.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        let path = dir.join("resolved_config.toml");
        let text = format!(
            "# clothlayer {} resolved configuration\n# config_hash = {}\n{}",
            clothlayer::VERSION,
            self.hash(),
            self.to_toml()
        );
        fs::write(&path, text).at(&path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back: RunConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn hash_ignores_paths_and_threads() {
        let a = RunConfig::default();
        let b = RunConfig { out: Some("elsewhere".into()), threads: 3, dataset: Some("d".into()), ..a.clone() };
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig { seed: 1, ..a.clone() };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn table1_weights_sum_to_the_dataset_size() {
        assert_eq!(TABLE1_COUNTS.iter().sum::<f64>(), 3306.0);
        let c = RunConfig { outfit_weights: OutfitWeights::Preset("table1".into()), ..RunConfig::default() };
        let w = c.weights().unwrap();
        let combos = combinations();
        let ts_trousers = combos.iter().position(|&p| p == (GarmentClass::TShirt, GarmentClass::LongPants)).unwrap();
        let top_skirt = combos.iter().position(|&p| p == (GarmentClass::Top, GarmentClass::Skirt)).unwrap();
        assert!((w[ts_trousers] / w[top_skirt] - 504.0 / 310.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sede = 3").is_err());
        let c: RunConfig = toml::from_str("outfit_weights = [1,1,1,1,1,1,1,1,2]\nseed = 4").unwrap();
        assert_eq!(c.seed, 4);
        assert!(c.weights().is_ok());
    }
}
