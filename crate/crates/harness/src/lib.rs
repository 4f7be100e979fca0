//! Synthetic scenes, training, evaluation and ablations for the bevfuse
//! detector.

pub mod ablation;
pub mod cbgs;
pub mod config;
pub mod error;
pub mod heatmap;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod scene;
pub mod train;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
