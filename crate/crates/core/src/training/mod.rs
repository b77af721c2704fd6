//! Objective, optimizer, checkpoints and the two-step training loop.

pub mod checkpoint;
pub mod loss;
pub mod optim;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use loss::{joint_loss, LossParts, LossWeights};
pub use optim::{Adam, CosineSchedule};
pub use trainer::{pretrain_stage1, train, train_stage2, EpochLog};
