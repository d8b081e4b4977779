//! Joint training, evaluation and large-stack inference.

mod config;
mod eval;
mod model;
mod train;

pub use config::{InputMode, SynthConfig, TrainConfig};
pub use eval::{evaluate, evaluate_with, infer_large, score_detections, tiled_detect, PooledCounts};
pub use model::Model;
pub use train::{build_validation, train, train_model, validation_loss, Dataset, IterationRecord, TrainHistory};
