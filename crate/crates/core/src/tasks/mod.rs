//! Node classification and link prediction: heads, F1 metrics, the
//! full-batch training loop with early stopping, and multi-trial runs.

mod metrics;
mod model;
mod train;

pub use metrics::{argmax_rows, f1_score, Averaging};
pub use model::{
    link_head, link_head_loss, node_head, node_head_loss, Architecture, Layer, LinkHeadOutput,
    Model, ModelConfig, NodeHeadOutput, SpectralConfig,
};
pub use train::{
    config_hash, headline_averaging, mean_variance, run_trials, train, TrainReport, TrialReport,
};
