//! Reverse-mode differentiation, point-cloud backbones with per-layer
//! heads, and the training loop.

pub mod backbone;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod matrix;
pub mod model;
pub mod optim;
pub mod params;
pub mod real;
pub mod train;

pub use backbone::{BackboneKind, Inputs};
pub use graph::{Gradients, Graph, Var};
pub use matrix::Matrix;
pub use model::{heads_for, multilayer_loss, HeadSpec, Model, ModelConfig};
pub use optim::{AdamW, AdamWConfig, OneCycle};
pub use params::{ParamId, ParamStore};
pub use real::Real;
pub use train::{EpochLog, Sample, TrainConfig, Trainer};
