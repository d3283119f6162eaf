//! HAN and HAN-GCN predictors: per-view encoders, semantic-attention fusion,
//! attention overrides and per-view gradient access.

mod config;
mod model;
mod train;

pub use config::{AttentionOverride, Backbone, PredictorConfig, SemanticInit};
pub use model::{
    argmax, cross_entropy_row, probabilities, Checkpoint, EpochRecord, Inference, Messages,
    TrainedPredictor, ViewInput, CHECKPOINT_VERSION,
};
pub use train::train;
