//! Trainable feature extractor and the frozen-rule training loop.

mod extractor;
mod model;
pub mod optim;
mod train;

pub use extractor::FeatureExtractor;
pub use model::CraftedModel;
pub use optim::{adam_step, sgd_step, AdamState, Optimizer};
pub use train::{crafted_loss, crafted_loss_and_grad, train_crafted, TrainConfig, TrainOutcome};
