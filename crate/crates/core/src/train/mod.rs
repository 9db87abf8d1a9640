//! Losses, reverse-mode gradients, Adam and the fine-tuning flows.

pub mod data;
pub mod graph;
pub mod grid;
pub mod loss;
pub mod trainer;

pub use data::{frame_targets, Utterance, UtteranceBatch};
pub use graph::{backward, forward, Gradients};
pub use grid::{grid_search_thresholds, ThresholdVector};
pub use loss::{frame_ce_loss, maxpool_loss};
pub use trainer::{
    evaluate_loss, finetune_attention, loss_and_logit_grad, finetune_channel, train_base, train_network, utterance_objective, write_log_csv,
    EpochLog, LossParts, TrainConfig, TrainOutcome,
};
