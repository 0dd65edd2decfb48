//! Training, whole-image inference and the complementarity ablation.

pub mod config;
pub mod dataset;
pub mod predict;
pub mod train;

pub use config::TrainConfig;
pub use dataset::{Blank, SceneData, SplitSizes};
pub use predict::{complementarity, predict_image};
pub use train::{train, RunLog, TrainOutcome};
