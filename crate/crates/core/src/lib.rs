//! Clothed-human layering toolkit.
//!
//! Synthesizes scan-like point clouds of dressed mannequins with exact
//! multi-layer ground truth, encodes that ground truth under five labeling
//! strategies, trains small point-cloud segmentation networks with one
//! output head per layer, and scores predictions with per-layer IoU.

pub mod error;
pub mod garment;
pub mod geometry;
pub mod layering;
pub mod metrics;
pub mod nn;
pub mod parallel;
pub mod ply;
pub mod scan;
pub mod scene;

pub use error::{Error, Result};
pub use garment::GarmentClass;
pub use layering::{CanonicalLabel, Strategy, StrategyLabels};

/// Toolkit version embedded in every artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
